#pragma once

// LLM-as-judge prompt formatting and response parsing, plus offline
// transports. Live API transports are not shipped; implement
// JudgeTransport to add one.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cfa/dataset.hpp"
#include "cfa/error.hpp"

namespace cfa {

inline constexpr std::string_view kJudgeInstructions =
    "You are an expert evaluator. You are given an original input and an AI-generated response. Your task is to evaluate\n"
    "the response based on four criteria: Accuracy, Relevance, Completeness, and\n"
    "Expression. Each criterion should be scored from 0 to 100 in increments of 5.\n"
    "Provide a brief justification for each score. Then, calculate the average of the\n"
    "four scores and present it as the Overall Score.\n";

inline constexpr std::string_view kJudgeCriteria =
    "Scoring Criteria:\n"
    "1. Accuracy (Acc): Does the response accurately reflect the content and intent of the original prompt?\n"
    "2. Relevance (Rel): Is the response closely aligned with the topic and requirements of the prompt?\n"
    "3. Completeness (Comp): Does the response address all essential aspects or key points in the prompt?\n"
    "4. Expression (Expr): Is the response clear, well-written, and easy to understand?\n";

inline constexpr std::string_view kJudgeFormatIntro =
    "Please only return the four line‐scores and the Overall Score, in this exact format:\n";

inline constexpr std::string_view kJudgeFormatBlock =
    "**Accuracy (Acc):** [score]/10\n"
    "**Relevance (Rel):** [score]/10\n"
    "**Completeness (Comp):** [score]/10\n"
    "**Expression (Expr):** [score]/10\n"
    "**Overall Score:** [average]/10\n";

/// Payload anchors. Payloads are escaped so these lines occur once.
inline constexpr std::string_view kInputAnchor = "### Original Input";
inline constexpr std::string_view kResponseAnchor = "### AI-Generated Response";

/// Backslash-escapes '\\', '*' and '#' so a payload cannot reproduce the
/// format block or an anchor line.
inline std::string escape_payload(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        if (c == '\\' || c == '*' || c == '#') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

inline std::string format_judge_prompt(std::string_view original_input, std::string_view response) {
    if (original_input.empty()) throw input_error("original input must be non-empty");
    if (response.empty()) throw input_error("response must be non-empty");
    std::string out;
    out += kJudgeInstructions;
    out += '\n';
    out += kJudgeCriteria;
    out += '\n';
    out += kInputAnchor;
    out += '\n';
    out += escape_payload(original_input);
    out += "\n\n";
    out += kResponseAnchor;
    out += '\n';
    out += escape_payload(response);
    out += "\n\n";
    out += kJudgeFormatIntro;
    out += '\n';
    out += kJudgeFormatBlock;
    return out;
}

struct JudgeScore {
    double accuracy = 0.0;
    double relevance = 0.0;
    double completeness = 0.0;
    double expression = 0.0;
    double overall = 0.0;                  // recomputed mean of the four
    int scale = 10;                        // denominator used by the judge: 10 or 100
    std::optional<double> stated_overall;  // as written by the judge, if present
    bool overall_mismatch = false;         // stated and recomputed differ by > 0.26 on a /10 basis
};

namespace detail {

struct CriterionLine {
    const char* name;
    const char* abbrev;
};

inline constexpr CriterionLine kCriteria[] = {
    {"Accuracy", "Acc"}, {"Relevance", "Rel"}, {"Completeness", "Comp"}, {"Expression", "Expr"}};

inline std::regex criterion_regex(const CriterionLine& c) {
    return std::regex(std::string(R"(^\s*\*\*\s*)") + c.name + R"(\s*\(\s*)" + c.abbrev +
                      R"(\s*\)\s*:\s*\*\*\s*(.*?)\s*$)");
}

inline const std::regex& overall_regex() {
    static const std::regex re(R"(^\s*\*\*\s*Overall\s+Score\s*:\s*\*\*\s*(.*?)\s*$)");
    return re;
}

/// "<number>/<10|100>" -> (value, denominator)
inline std::pair<double, int> parse_fraction(const std::string& body, const std::string& line) {
    static const std::regex re(R"(^([+-]?(?:\d+(?:\.\d*)?|\.\d+))\s*/\s*(\d+)$)");
    std::smatch m;
    if (!std::regex_match(body, m, re)) throw parse_error("non-numeric score in line: " + line);
    const double value = std::stod(m[1].str());
    const int denom = std::stoi(m[2].str());
    if (denom != 10 && denom != 100) throw parse_error("unsupported denominator in line: " + line);
    if (value < 0.0 || value > denom) throw parse_error("score out of range in line: " + line);
    return {value, denom};
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

} // namespace detail

inline JudgeScore parse_judge_response(std::string_view text) {
    if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) throw parse_error("empty judge response");

    std::optional<std::pair<double, int>> found[4];
    std::optional<std::pair<double, int>> overall;
    std::regex res[4];
    for (int i = 0; i < 4; ++i) res[i] = detail::criterion_regex(detail::kCriteria[i]);

    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        const std::string line = detail::strip_cr(raw);
        std::smatch m;
        for (int i = 0; i < 4; ++i) {
            if (std::regex_match(line, m, res[i])) {
                if (found[i]) throw parse_error(std::string("duplicated criterion line: ") + detail::kCriteria[i].name);
                found[i] = detail::parse_fraction(m[1].str(), line);
            }
        }
        if (std::regex_match(line, m, detail::overall_regex())) {
            if (overall) throw parse_error("duplicated Overall Score line");
            overall = detail::parse_fraction(m[1].str(), line);
        }
    }
    for (int i = 0; i < 4; ++i)
        if (!found[i]) throw parse_error(std::string("missing criterion: ") + detail::kCriteria[i].name);

    JudgeScore s;
    s.scale = found[0]->second;
    for (int i = 1; i < 4; ++i)
        if (found[i]->second != s.scale) throw parse_error("criterion lines mix /10 and /100 scales");
    s.accuracy = found[0]->first;
    s.relevance = found[1]->first;
    s.completeness = found[2]->first;
    s.expression = found[3]->first;
    s.overall = (s.accuracy + s.relevance + s.completeness + s.expression) / 4.0;
    if (overall) {
        s.stated_overall = overall->first;
        const double stated = overall->second == s.scale ? overall->first : overall->first * s.scale / overall->second;
        s.overall_mismatch = std::abs(stated - s.overall) * 10.0 / s.scale > 0.26;
    }
    return s;
}

/// Renders the format block with concrete numbers, as a cooperative judge would.
inline std::string fill_format_block(double acc, double rel, double comp, double expr, int scale) {
    auto num = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    const std::string den = "/" + std::to_string(scale);
    const double avg = (acc + rel + comp + expr) / 4.0;
    return "**Accuracy (Acc):** " + num(acc) + den + "\n" + "**Relevance (Rel):** " + num(rel) + den + "\n" +
           "**Completeness (Comp):** " + num(comp) + den + "\n" + "**Expression (Expr):** " + num(expr) + den + "\n" +
           "**Overall Score:** " + num(avg) + den + "\n";
}

// ---------------------------------------------------------------------------
// Transports

class JudgeTransport {
public:
    virtual ~JudgeTransport() = default;
    virtual std::string request(const std::string& prompt) = 0;
    /// True when request() may be called from several threads at once.
    virtual bool concurrent_safe() const { return false; }
};

/// Canned responses keyed by exact prompt, with an optional fallback.
class MockTransport : public JudgeTransport {
public:
    using Fallback = std::function<std::string(const std::string&)>;

    MockTransport() = default;
    explicit MockTransport(Fallback fallback) : fallback_(std::move(fallback)) {}

    void add(std::string prompt, std::string response) { canned_[std::move(prompt)] = std::move(response); }

    std::string request(const std::string& prompt) override {
        if (auto it = canned_.find(prompt); it != canned_.end()) return it->second;
        if (fallback_) return fallback_(prompt);
        throw lookup_error("mock judge has no response for this prompt");
    }

    bool concurrent_safe() const override { return true; }

private:
    std::map<std::string, std::string> canned_;
    Fallback fallback_;
};

/// 64-bit FNV-1a of the prompt, as 16 lowercase hex digits.
inline std::string request_hash(std::string_view prompt) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : prompt) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Replays judge responses from a JSONL log of
/// {"request_hash": "...", "response": "..."} records.
class RecordedLogTransport : public JudgeTransport {
public:
    explicit RecordedLogTransport(const std::filesystem::path& path) {
        auto records = read_jsonl<std::pair<std::string, std::string>>(path, [](const nlohmann::json& j) {
            if (!j.contains("request_hash") || !j["request_hash"].is_string())
                throw validation_error("request_hash", "missing or not a string");
            if (!j.contains("response") || !j["response"].is_string())
                throw validation_error("response", "missing or not a string");
            return std::pair{j["request_hash"].get<std::string>(), j["response"].get<std::string>()};
        });
        for (auto& [h, r] : records) log_[h] = std::move(r);
    }

    std::string request(const std::string& prompt) override {
        auto it = log_.find(request_hash(prompt));
        if (it == log_.end()) throw lookup_error("no recorded response for request " + request_hash(prompt));
        return it->second;
    }

    bool concurrent_safe() const override { return true; }
    std::size_t size() const noexcept { return log_.size(); }

private:
    std::map<std::string, std::string> log_;
};

inline nlohmann::json recorded_log_entry(const std::string& prompt, const std::string& response) {
    return {{"request_hash", request_hash(prompt)}, {"response", response}};
}

} // namespace cfa
