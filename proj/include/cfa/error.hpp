#pragma once

#include <stdexcept>
#include <string>

namespace cfa {

/// Base of every exception thrown by the library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad argument to a pure function (empty sequence, non-finite value, ...).
class input_error : public error {
public:
    using error::error;
};

/// A record violates a type invariant. Carries the offending field name and,
/// when raised by a loader, the 1-based line number (0 otherwise).
class validation_error : public error {
public:
    validation_error(const std::string& field, const std::string& what, std::size_t line = 0)
        : error((line ? "line " + std::to_string(line) + ": " : std::string{}) + field + ": " + what),
          field_(field), line_(line) {}

    const std::string& field() const noexcept { return field_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string field_;
    std::size_t line_;
};

/// Structural problem with a dataset as a whole (mixed evidence kinds).
class schema_error : public error {
public:
    using error::error;
};

/// Malformed text: a dataset line, a judge response, a config file.
class parse_error : public error {
public:
    using error::error;

    parse_error(std::size_t line, const std::string& what)
        : error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_ = 0;
};

class config_error : public error {
public:
    using error::error;
};

class io_error : public error {
public:
    using error::error;
};

class calibration_error : public error {
public:
    using error::error;
};

class size_error : public error {
public:
    using error::error;
};

class lookup_error : public error {
public:
    using error::error;
};

} // namespace cfa
