#pragma once

// Set-wise uncertainty aggregation: each response gets the confidence of
// its stratum, and a pair's weight is the mean of its two confidences.
// With the default two-rung ladder this reproduces
//   u = q_a            both responses in the tight set
//   u = q_b            both in the wider set only
//   u = (q_a + q_b)/2  responses from different sets
// and extends it to deeper ladders and to the Outside stratum.

#include <span>
#include <vector>

#include "cfa/conformal.hpp"
#include "cfa/dataset.hpp"
#include "cfa/error.hpp"
#include "cfa/nonconformity.hpp"

namespace cfa {

struct PairWeight {
    double u;
    double chosen_confidence;
    double rejected_confidence;
};

inline double response_confidence(Stratum s, const LevelLadder& ladder) {
    if (s.is_outside()) return ladder.outside_weight();
    if (s.band >= ladder.size()) throw config_error("stratum band " + std::to_string(s.band) + " exceeds ladder");
    return ladder.rungs()[s.band].confidence;
}

inline PairWeight pair_weight(Stratum chosen, Stratum rejected, const LevelLadder& ladder) {
    const double c = response_confidence(chosen, ladder);
    const double r = response_confidence(rejected, ladder);
    return {(c + r) / 2.0, c, r};
}

/// How responses are scored before stratification.
struct ScorerConfig {
    EvidenceKind kind = EvidenceKind::WhiteBox;
    bool length_normalize = false;  // white-box only
    BlackBoxConfig black_box;

    friend bool operator==(const ScorerConfig&, const ScorerConfig&) = default;
};

inline double score_response(const std::string& response, const ResponseEvidence& evidence, const ScorerConfig& config) {
    if (evidence.kind != config.kind)
        throw config_error("evidence kind '" + to_string(evidence.kind) + "' does not match scorer kind '" +
                           to_string(config.kind) + "'");
    if (evidence.kind == EvidenceKind::WhiteBox) return score_whitebox(evidence.token_logprobs, config.length_normalize);
    return score_blackbox(SampleBag(evidence.samples), response, config.black_box);
}

/// Scores of both responses of each pair, chosen first.
inline std::vector<double> score_pairs(std::span<const PreferenceExample> data, const ScorerConfig& config) {
    std::vector<double> scores;
    scores.reserve(2 * data.size());
    for (const auto& ex : data) {
        scores.push_back(score_response(ex.chosen, ex.chosen_evidence, config));
        scores.push_back(score_response(ex.rejected, ex.rejected_evidence, config));
    }
    return scores;
}

inline std::vector<WeightedPreferenceExample> weight_dataset(std::span<const PreferenceExample> data,
                                                             const CalibratorState& calibrator,
                                                             const ScorerConfig& config) {
    std::vector<WeightedPreferenceExample> out;
    out.reserve(data.size());
    for (const auto& ex : data) {
        WeightedPreferenceExample w;
        w.example = ex;
        w.chosen_score = score_response(ex.chosen, ex.chosen_evidence, config);
        w.rejected_score = score_response(ex.rejected, ex.rejected_evidence, config);
        w.chosen_stratum = stratum_of(calibrator, w.chosen_score);
        w.rejected_stratum = stratum_of(calibrator, w.rejected_score);
        w.weight = pair_weight(w.chosen_stratum, w.rejected_stratum, calibrator.ladder()).u;
        out.push_back(std::move(w));
    }
    return out;
}

inline std::vector<WeightedPreferenceExample> weight_dataset(const std::vector<PreferenceExample>& data,
                                                             const CalibratorState& calibrator,
                                                             const ScorerConfig& config) {
    return weight_dataset(std::span<const PreferenceExample>(data), calibrator, config);
}

} // namespace cfa
