#pragma once

// Preference records and their line-delimited JSON encoding.
//
// One record per line:
//   {"prompt_id": ..., "prompt": ..., "chosen": ..., "rejected": ...,
//    "chosen_evidence": {"kind": "whitebox", "token_logprobs": [...]},
//    "rejected_evidence": {"kind": "blackbox", "samples": [...]}}
// The weighted schema adds weight, chosen_score, rejected_score,
// chosen_stratum and rejected_stratum.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cfa/conformal.hpp"
#include "cfa/error.hpp"

namespace cfa {

using json = nlohmann::json;

enum class EvidenceKind { WhiteBox, BlackBox };

inline std::string to_string(EvidenceKind k) { return k == EvidenceKind::WhiteBox ? "whitebox" : "blackbox"; }

inline EvidenceKind parse_evidence_kind(const std::string& s) {
    if (s == "whitebox") return EvidenceKind::WhiteBox;
    if (s == "blackbox") return EvidenceKind::BlackBox;
    throw parse_error("unknown evidence kind '" + s + "'");
}

struct ResponseEvidence {
    EvidenceKind kind = EvidenceKind::WhiteBox;
    std::vector<double> token_logprobs;  // WhiteBox only
    std::vector<std::string> samples;    // BlackBox only

    static ResponseEvidence white_box(std::vector<double> logprobs) {
        return {EvidenceKind::WhiteBox, std::move(logprobs), {}};
    }
    static ResponseEvidence black_box(std::vector<std::string> samples) {
        return {EvidenceKind::BlackBox, {}, std::move(samples)};
    }

    /// Throws validation_error naming `field` on failure.
    void validate(const std::string& field) const {
        if (kind == EvidenceKind::WhiteBox) {
            if (token_logprobs.empty()) throw validation_error(field + ".token_logprobs", "must be non-empty");
            for (double lp : token_logprobs)
                if (!std::isfinite(lp) || lp > 0.0)
                    throw validation_error(field + ".token_logprobs", "entries must be finite and <= 0");
            if (!samples.empty()) throw validation_error(field + ".samples", "not allowed on white-box evidence");
        } else {
            if (samples.empty()) throw validation_error(field + ".samples", "must contain at least one sample");
            if (!token_logprobs.empty())
                throw validation_error(field + ".token_logprobs", "not allowed on black-box evidence");
        }
    }

    friend bool operator==(const ResponseEvidence&, const ResponseEvidence&) = default;
};

struct PreferenceExample {
    std::string prompt_id;
    std::string prompt;
    std::string chosen;
    std::string rejected;
    ResponseEvidence chosen_evidence;
    ResponseEvidence rejected_evidence;

    void validate() const {
        if (chosen == rejected) throw validation_error("rejected", "must differ from chosen");
        chosen_evidence.validate("chosen_evidence");
        rejected_evidence.validate("rejected_evidence");
        if (chosen_evidence.kind != rejected_evidence.kind)
            throw schema_error("chosen and rejected evidence must be of the same kind");
    }

    friend bool operator==(const PreferenceExample&, const PreferenceExample&) = default;
};

struct WeightedPreferenceExample {
    PreferenceExample example;
    double weight = 1.0;
    double chosen_score = 0.0;
    double rejected_score = 0.0;
    Stratum chosen_stratum;
    Stratum rejected_stratum;

    void validate() const {
        example.validate();
        if (!(weight >= 0.0 && weight <= 1.0)) throw validation_error("weight", "must lie in [0, 1]");
        if (!std::isfinite(chosen_score)) throw validation_error("chosen_score", "must be finite");
        if (!std::isfinite(rejected_score)) throw validation_error("rejected_score", "must be finite");
    }

    friend bool operator==(const WeightedPreferenceExample&, const WeightedPreferenceExample&) = default;
};

// ---------------------------------------------------------------------------
// JSON mapping

inline json to_json(const ResponseEvidence& e) {
    json j;
    j["kind"] = to_string(e.kind);
    if (e.kind == EvidenceKind::WhiteBox)
        j["token_logprobs"] = e.token_logprobs;
    else
        j["samples"] = e.samples;
    return j;
}

inline json to_json(const PreferenceExample& ex) {
    json j;
    j["prompt_id"] = ex.prompt_id;
    j["prompt"] = ex.prompt;
    j["chosen"] = ex.chosen;
    j["rejected"] = ex.rejected;
    j["chosen_evidence"] = to_json(ex.chosen_evidence);
    j["rejected_evidence"] = to_json(ex.rejected_evidence);
    return j;
}

inline json to_json(const WeightedPreferenceExample& w) {
    json j = to_json(w.example);
    j["weight"] = w.weight;
    j["chosen_score"] = w.chosen_score;
    j["rejected_score"] = w.rejected_score;
    j["chosen_stratum"] = to_string(w.chosen_stratum);
    j["rejected_stratum"] = to_string(w.rejected_stratum);
    return j;
}

namespace detail {

inline const json& require(const json& j, const char* field) {
    auto it = j.find(field);
    if (it == j.end()) throw validation_error(field, "missing field");
    return *it;
}

inline std::string require_string(const json& j, const char* field) {
    const auto& v = require(j, field);
    if (!v.is_string()) throw validation_error(field, "must be a string");
    return v.get<std::string>();
}

inline double require_number(const json& j, const char* field) {
    const auto& v = require(j, field);
    if (!v.is_number()) throw validation_error(field, "must be a number");
    return v.get<double>();
}

inline ResponseEvidence evidence_from_json(const json& j, const std::string& field) {
    if (!j.is_object()) throw validation_error(field, "must be an object");
    ResponseEvidence e;
    const auto kind = j.find("kind");
    if (kind == j.end() || !kind->is_string()) throw validation_error(field + ".kind", "missing or not a string");
    try {
        e.kind = parse_evidence_kind(kind->get<std::string>());
    } catch (const parse_error& err) {
        throw validation_error(field + ".kind", err.what());
    }
    if (auto lp = j.find("token_logprobs"); lp != j.end()) {
        if (!lp->is_array()) throw validation_error(field + ".token_logprobs", "must be an array");
        for (const auto& x : *lp) {
            if (!x.is_number()) throw validation_error(field + ".token_logprobs", "entries must be numbers");
            e.token_logprobs.push_back(x.get<double>());
        }
    }
    if (auto s = j.find("samples"); s != j.end()) {
        if (!s->is_array()) throw validation_error(field + ".samples", "must be an array");
        for (const auto& x : *s) {
            if (!x.is_string()) throw validation_error(field + ".samples", "entries must be strings");
            e.samples.push_back(x.get<std::string>());
        }
    }
    return e;
}

} // namespace detail

inline PreferenceExample preference_from_json(const json& j) {
    if (!j.is_object()) throw validation_error("record", "must be a JSON object");
    PreferenceExample ex;
    ex.prompt_id = detail::require_string(j, "prompt_id");
    ex.prompt = detail::require_string(j, "prompt");
    ex.chosen = detail::require_string(j, "chosen");
    ex.rejected = detail::require_string(j, "rejected");
    ex.chosen_evidence = detail::evidence_from_json(detail::require(j, "chosen_evidence"), "chosen_evidence");
    ex.rejected_evidence = detail::evidence_from_json(detail::require(j, "rejected_evidence"), "rejected_evidence");
    ex.validate();
    return ex;
}

inline WeightedPreferenceExample weighted_from_json(const json& j) {
    WeightedPreferenceExample w;
    w.example = preference_from_json(j);
    w.weight = detail::require_number(j, "weight");
    w.chosen_score = detail::require_number(j, "chosen_score");
    w.rejected_score = detail::require_number(j, "rejected_score");
    try {
        w.chosen_stratum = parse_stratum(detail::require_string(j, "chosen_stratum"));
    } catch (const parse_error& e) {
        throw validation_error("chosen_stratum", e.what());
    }
    try {
        w.rejected_stratum = parse_stratum(detail::require_string(j, "rejected_stratum"));
    } catch (const parse_error& e) {
        throw validation_error("rejected_stratum", e.what());
    }
    w.validate();
    return w;
}

// ---------------------------------------------------------------------------
// Files

/// Reads every non-empty line of a JSONL file. Errors carry the 1-based line.
template <class Record, class Decode>
std::vector<Record> read_jsonl(const std::filesystem::path& path, Decode&& decode) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path.string() + "' for reading");
    std::vector<Record> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw parse_error(lineno, std::string("malformed record: ") + e.what());
        }
        try {
            out.push_back(decode(j));
        } catch (const validation_error& e) {
            throw validation_error(e.field(), std::string(e.what()).substr(e.field().size() + 2), lineno);
        } catch (const schema_error& e) {
            throw schema_error("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

namespace detail {

template <class Record>
void check_single_kind(const std::vector<Record>& records, EvidenceKind (*kind_of)(const Record&)) {
    for (std::size_t i = 1; i < records.size(); ++i)
        if (kind_of(records[i]) != kind_of(records[0]))
            throw schema_error("record " + std::to_string(i + 1) + " mixes evidence kinds with record 1");
}

inline EvidenceKind kind_of_pref(const PreferenceExample& e) { return e.chosen_evidence.kind; }
inline EvidenceKind kind_of_weighted(const WeightedPreferenceExample& e) { return e.example.chosen_evidence.kind; }

/// Write `contents` to a sibling temp file then rename over `path`.
inline void atomic_write(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot open '" + tmp.string() + "' for writing");
        out << contents;
        out.flush();
        if (!out) throw io_error("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw io_error("cannot move output into place at '" + path.string() + "'");
    }
}

} // namespace detail

inline std::vector<PreferenceExample> load_preferences(const std::filesystem::path& path) {
    auto records = read_jsonl<PreferenceExample>(path, preference_from_json);
    detail::check_single_kind(records, detail::kind_of_pref);
    return records;
}

inline std::vector<WeightedPreferenceExample> load_weighted(const std::filesystem::path& path) {
    auto records = read_jsonl<WeightedPreferenceExample>(path, weighted_from_json);
    detail::check_single_kind(records, detail::kind_of_weighted);
    return records;
}

template <class Record>
std::string to_jsonl(std::span<const Record> records) {
    std::string s;
    for (const auto& r : records) {
        s += to_json(r).dump();
        s += '\n';
    }
    return s;
}

inline void save_preferences(std::span<const PreferenceExample> data, const std::filesystem::path& path) {
    detail::atomic_write(path, to_jsonl(data));
}

inline void save_weighted(std::span<const WeightedPreferenceExample> data, const std::filesystem::path& path) {
    detail::atomic_write(path, to_jsonl(data));
}

// ---------------------------------------------------------------------------
// Calibration split

struct SplitSpec {
    std::size_t calibration_size = 100;
    std::uint64_t seed = 0;
};

template <class T>
struct Split {
    std::vector<T> calibration;
    std::vector<T> train;
};

/// Seeded permutation of the input indices. The calibration set is the
/// first `calibration_size` entries; the train set keeps the permuted order.
template <class T>
Split<T> split_calibration(std::span<const T> data, const SplitSpec& spec) {
    if (spec.calibration_size == 0) throw size_error("calibration_size must be positive");
    if (spec.calibration_size >= data.size())
        throw size_error("calibration_size (" + std::to_string(spec.calibration_size) +
                         ") must be smaller than the dataset (" + std::to_string(data.size()) + ")");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);

    Split<T> out;
    out.calibration.reserve(spec.calibration_size);
    out.train.reserve(data.size() - spec.calibration_size);
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < spec.calibration_size)
            out.calibration.push_back(data[order[i]]);
        else
            out.train.push_back(data[order[i]]);
    }
    return out;
}

template <class T>
Split<T> split_calibration(const std::vector<T>& data, const SplitSpec& spec) {
    return split_calibration(std::span<const T>(data), spec);
}

// ---------------------------------------------------------------------------
// Calibrator artifact

inline json to_json(const LevelLadder& ladder) {
    json rungs = json::array();
    for (const auto& r : ladder.rungs()) rungs.push_back({{"level", r.level}, {"confidence", r.confidence}});
    return {{"rungs", rungs}, {"outside_weight", ladder.outside_weight()}};
}

inline LevelLadder ladder_from_json(const json& j) {
    std::vector<Rung> rungs;
    for (const auto& r : detail::require(j, "rungs"))
        rungs.push_back({detail::require_number(r, "level"), detail::require_number(r, "confidence")});
    return LevelLadder(std::move(rungs), detail::require_number(j, "outside_weight"));
}

/// Infinite thresholds are written as null.
inline json to_json(const CalibratorState& state) {
    json t = json::array();
    for (double x : state.thresholds()) {
        if (std::isinf(x))
            t.push_back(nullptr);
        else
            t.push_back(x);
    }
    return {{"sorted_scores", state.sorted_scores()}, {"ladder", to_json(state.ladder())}, {"thresholds", t}};
}

inline CalibratorState calibrator_from_json(const json& j) {
    std::vector<double> scores = detail::require(j, "sorted_scores").get<std::vector<double>>();
    LevelLadder ladder = ladder_from_json(detail::require(j, "ladder"));
    std::vector<double> thresholds;
    for (const auto& x : detail::require(j, "thresholds"))
        thresholds.push_back(x.is_null() ? std::numeric_limits<double>::infinity() : x.get<double>());
    return CalibratorState(std::move(scores), std::move(ladder), std::move(thresholds));
}

} // namespace cfa
