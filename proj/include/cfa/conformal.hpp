#pragma once

// Split-conformal calibration over nonconformity scores.
//
// A ladder of quantile levels p_1 < ... < p_K gives nested prediction sets
// {s <= t(p_1)} ⊆ ... ⊆ {s <= t(p_K)}. Each response falls into exactly one
// band: band k is the first level whose threshold admits the score, and
// scores above every threshold are Outside.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cfa/error.hpp"

namespace cfa {

struct Rung {
    double level;       // quantile level p in (0, 1)
    double confidence;  // weight w in [0, 1]

    friend bool operator==(const Rung&, const Rung&) = default;
};

/// Quantile levels with strictly increasing p and strictly decreasing
/// confidence, plus the weight given to scores outside every set.
class LevelLadder {
public:
    LevelLadder() : LevelLadder({{0.5, 0.8}, {0.8, 0.5}}, 0.25) {}

    LevelLadder(std::vector<Rung> rungs, double outside_weight)
        : rungs_(std::move(rungs)), outside_weight_(outside_weight) {
        if (rungs_.empty()) throw config_error("ladder needs at least one rung");
        for (std::size_t i = 0; i < rungs_.size(); ++i) {
            const auto& r = rungs_[i];
            if (!(r.level > 0.0 && r.level < 1.0))
                throw config_error("ladder level must lie in (0, 1)");
            if (!(r.confidence >= 0.0 && r.confidence <= 1.0))
                throw config_error("ladder confidence must lie in [0, 1]");
            if (i > 0 && !(r.level > rungs_[i - 1].level))
                throw config_error("ladder levels must be strictly increasing");
            if (i > 0 && !(r.confidence < rungs_[i - 1].confidence))
                throw config_error("ladder confidences must be strictly decreasing");
        }
        if (!(outside_weight_ >= 0.0 && outside_weight_ <= 1.0))
            throw config_error("outside weight must lie in [0, 1]");
        if (!(outside_weight_ < rungs_.back().confidence))
            throw config_error("outside weight must be below every rung confidence");
    }

    const std::vector<Rung>& rungs() const noexcept { return rungs_; }
    std::size_t size() const noexcept { return rungs_.size(); }
    double outside_weight() const noexcept { return outside_weight_; }

    friend bool operator==(const LevelLadder&, const LevelLadder&) = default;

private:
    std::vector<Rung> rungs_;
    double outside_weight_;
};

/// Reliability band of one response. Band 0 is Core; Outside is a sentinel
/// that sorts after every finite band, so the value does not depend on the
/// ladder size.
struct Stratum {
    static constexpr std::size_t outside_band = std::numeric_limits<std::size_t>::max();

    std::size_t band = 0;

    static constexpr Stratum core() noexcept { return {0}; }
    static constexpr Stratum shell(std::size_t k = 1) noexcept { return {k}; }
    static constexpr Stratum outside() noexcept { return {outside_band}; }

    constexpr bool is_core() const noexcept { return band == 0; }
    constexpr bool is_outside() const noexcept { return band == outside_band; }

    friend constexpr auto operator<=>(const Stratum&, const Stratum&) = default;
};

/// "core", "shell", "outside"; deeper shells of longer ladders are "shell2", ...
inline std::string to_string(Stratum s) {
    if (s.is_core()) return "core";
    if (s.is_outside()) return "outside";
    if (s.band == 1) return "shell";
    return "shell" + std::to_string(s.band);
}

inline Stratum parse_stratum(const std::string& text) {
    if (text == "core") return Stratum::core();
    if (text == "outside") return Stratum::outside();
    if (text == "shell") return Stratum::shell(1);
    if (text.rfind("shell", 0) == 0 && text.size() > 5) {
        std::size_t k = 0;
        for (std::size_t i = 5; i < text.size(); ++i) {
            if (text[i] < '0' || text[i] > '9') throw parse_error("unknown stratum '" + text + "'");
            k = k * 10 + static_cast<std::size_t>(text[i] - '0');
        }
        if (k >= 2) return Stratum::shell(k);
    }
    throw parse_error("unknown stratum '" + text + "'");
}

/// Index (1-based) of the order statistic used as the level-p threshold
/// with n calibration scores: ceil((n + 1) p).
///
/// Products within a few ulps of an integer are snapped to it first, so a
/// decimal level such as 0.3 behaves as the exact fraction 3/10.
inline std::size_t conformal_rank(std::size_t n, double level) {
    const double x = static_cast<double>(n + 1) * level;
    const double nearest = std::round(x);
    if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, nearest)) return static_cast<std::size_t>(nearest);
    return static_cast<std::size_t>(std::ceil(x));
}

class CalibratorState {
public:
    CalibratorState(std::vector<double> sorted_scores, LevelLadder ladder, std::vector<double> thresholds)
        : sorted_(std::move(sorted_scores)), ladder_(std::move(ladder)), thresholds_(std::move(thresholds)) {
        if (sorted_.empty()) throw calibration_error("calibrator has no scores");
        if (!std::is_sorted(sorted_.begin(), sorted_.end()))
            throw calibration_error("calibration scores must be sorted");
        if (thresholds_.size() != ladder_.size())
            throw calibration_error("one threshold per ladder rung required");
        if (!std::is_sorted(thresholds_.begin(), thresholds_.end()))
            throw calibration_error("thresholds must be non-decreasing");
    }

    const std::vector<double>& sorted_scores() const noexcept { return sorted_; }
    const LevelLadder& ladder() const noexcept { return ladder_; }
    /// +infinity where the rank exceeds n.
    const std::vector<double>& thresholds() const noexcept { return thresholds_; }
    double threshold(std::size_t rung) const { return thresholds_.at(rung); }

    friend bool operator==(const CalibratorState&, const CalibratorState&) = default;

private:
    std::vector<double> sorted_;
    LevelLadder ladder_;
    std::vector<double> thresholds_;
};

inline CalibratorState calibrate(std::span<const double> scores, const LevelLadder& ladder = {}) {
    if (scores.empty()) throw calibration_error("cannot calibrate on an empty score set");
    for (double s : scores)
        if (!std::isfinite(s)) throw input_error("calibration score must be finite");

    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());

    const std::size_t n = sorted.size();
    std::vector<double> thresholds;
    thresholds.reserve(ladder.size());
    for (const auto& rung : ladder.rungs()) {
        const std::size_t k = conformal_rank(n, rung.level);
        thresholds.push_back(k > n ? std::numeric_limits<double>::infinity() : sorted[k - 1]);
    }
    return CalibratorState(std::move(sorted), ladder, std::move(thresholds));
}

inline Stratum stratum_of(const CalibratorState& state, double score) {
    if (!std::isfinite(score)) throw input_error("score must be finite");
    const auto& t = state.thresholds();
    for (std::size_t k = 0; k < t.size(); ++k)
        if (score <= t[k]) return Stratum{k};
    return Stratum::outside();
}

/// Fraction of test scores admitted by the set at `rung`.
inline double coverage_audit(const CalibratorState& state, std::span<const double> test_scores, std::size_t rung) {
    if (test_scores.empty()) throw input_error("coverage audit needs at least one test score");
    const double t = state.threshold(rung);
    std::size_t inside = 0;
    for (double s : test_scores) inside += (s <= t) ? 1 : 0;
    return static_cast<double>(inside) / static_cast<double>(test_scores.size());
}

} // namespace cfa
