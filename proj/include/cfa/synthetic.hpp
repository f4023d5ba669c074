#pragma once

// Synthetic noisy-feedback worlds and the arm comparison run on them.
//
// Every response has a hidden quality g ~ N(0, 1) and a latent atypicality
//   t = -rho * g + sqrt(1 - rho^2) * eps,
// from which its evidence is synthesised (white-box: a token log-prob
// sequence with total NLL increasing in t; black-box: a per-prompt bag of
// generations in which lower-t responses appear more often). A world-level
// calibrator over all responses assigns strata, and each preference label
// is flipped with the rate of the worse response's stratum.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfa/conformal.hpp"
#include "cfa/dataset.hpp"
#include "cfa/error.hpp"
#include "cfa/models.hpp"
#include "cfa/trainer.hpp"
#include "cfa/weighting.hpp"

namespace cfa {

struct FlipRates {
    double core = 0.05;
    double shell = 0.2;
    double outside = 0.4;

    friend bool operator==(const FlipRates&, const FlipRates&) = default;
};

struct WorldConfig {
    std::size_t n_prompts = 200;
    std::size_t vocab_size = 8;
    EvidenceKind evidence_kind = EvidenceKind::WhiteBox;
    double rho = 0.6;  // strength of the typicality/quality link
    FlipRates flip_rates;
    std::size_t n_pairs = 2000;
    std::uint64_t seed = 0;
    std::size_t bag_size = 64;     // black-box generations per prompt
    double bag_sharpness = 1.0;    // black-box sampling weight exp(-sharpness * t)

    void validate() const {
        if (n_prompts == 0) throw config_error("n_prompts must be positive");
        if (vocab_size < 2) throw config_error("vocab_size must be at least 2");
        if (!(rho >= 0.0 && rho <= 1.0)) throw config_error("rho must lie in [0, 1]");
        for (double f : {flip_rates.core, flip_rates.shell, flip_rates.outside})
            if (!(f >= 0.0 && f < 0.5)) throw config_error("flip rates must lie in [0, 0.5)");
        if (n_pairs == 0) throw config_error("n_pairs must be positive");
        if (bag_size == 0) throw config_error("bag_size must be positive");
        if (!(bag_sharpness >= 0.0) || !std::isfinite(bag_sharpness)) throw config_error("bag_sharpness must be >= 0");
    }

    friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

/// Hidden state of a generated world. Per-response vectors are indexed by
/// the flat cell index of `World::vocab`; per-pair vectors follow
/// `World::examples`.
struct WorldTruth {
    std::vector<double> quality;
    std::vector<double> score;
    std::vector<Stratum> stratum;
    std::vector<std::size_t> pair_prompt;
    std::vector<std::size_t> pair_better;  // flat index of the higher-quality response
    std::vector<std::size_t> pair_worse;
    std::vector<Stratum> pair_stratum;     // the worse of the two responses' strata
    std::vector<bool> flipped;
    std::vector<double> thresholds;        // world-level calibrator
};

struct World {
    WorldConfig config;
    std::vector<PreferenceExample> examples;
    ResponseTable vocab;
    WorldTruth truth;
};

namespace detail {

inline std::string prompt_id(std::size_t p) {
    std::ostringstream os;
    os << 'p' << std::setw(4) << std::setfill('0') << p;
    return os.str();
}

inline std::string response_text(std::size_t p, std::size_t y) {
    return "response " + std::to_string(y) + " for prompt " + std::to_string(p);
}

/// Largest-remainder apportionment of `total` draws over `weights`.
inline std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::size_t> counts(weights.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(total) * weights[i] / sum;
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        used += counts[i];
        rem.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; used < total; ++k, ++used) ++counts[rem[k % rem.size()].second];
    return counts;
}

inline double flip_rate(const FlipRates& f, Stratum s) {
    if (s.is_core()) return f.core;
    if (s.is_outside()) return f.outside;
    return f.shell;
}

} // namespace detail

inline World generate_world(const WorldConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> length(4, 16);
    std::exponential_distribution<double> expo(1.0);

    World w;
    w.config = config;
    const std::size_t P = config.n_prompts, V = config.vocab_size;
    const double noise = std::sqrt(std::max(0.0, 1.0 - config.rho * config.rho));

    std::vector<std::vector<std::string>> texts(P);
    std::vector<double> latent(P * V);
    w.truth.quality.resize(P * V);
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t y = 0; y < V; ++y) {
            const double g = normal(rng);
            w.truth.quality[p * V + y] = g;
            latent[p * V + y] = -config.rho * g + noise * normal(rng);
            texts[p].push_back(detail::response_text(p, y));
        }
        w.vocab.add_prompt(detail::prompt_id(p), texts[p]);
    }

    // Evidence per response.
    std::vector<ResponseEvidence> evidence(P * V);
    for (std::size_t p = 0; p < P; ++p) {
        if (config.evidence_kind == EvidenceKind::WhiteBox) {
            for (std::size_t y = 0; y < V; ++y) {
                const double total_nll = std::exp(0.5 * latent[p * V + y] + 1.5);
                const std::size_t n = length(rng);
                std::vector<double> share(n);
                for (auto& s : share) s = expo(rng) + 1e-12;
                const double sum = std::accumulate(share.begin(), share.end(), 0.0);
                for (auto& s : share) s = -total_nll * s / sum;
                evidence[p * V + y] = ResponseEvidence::white_box(std::move(share));
            }
        } else {
            std::vector<double> weights(V);
            for (std::size_t y = 0; y < V; ++y) weights[y] = std::exp(-config.bag_sharpness * latent[p * V + y]);
            const auto counts = detail::apportion(weights, config.bag_size);
            std::vector<std::string> bag;
            bag.reserve(config.bag_size);
            for (std::size_t y = 0; y < V; ++y) bag.insert(bag.end(), counts[y], texts[p][y]);
            for (std::size_t y = 0; y < V; ++y) evidence[p * V + y] = ResponseEvidence::black_box(bag);
        }
    }

    // World-level strata from the library's own scorer.
    ScorerConfig scorer;
    scorer.kind = config.evidence_kind;
    w.truth.score.resize(P * V);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t y = 0; y < V; ++y)
            w.truth.score[p * V + y] = score_response(texts[p][y], evidence[p * V + y], scorer);
    const auto world_cal = calibrate(w.truth.score, LevelLadder{});
    w.truth.thresholds = world_cal.thresholds();
    w.truth.stratum.resize(P * V);
    for (std::size_t i = 0; i < P * V; ++i) w.truth.stratum[i] = stratum_of(world_cal, w.truth.score[i]);

    // Pairs.
    std::uniform_int_distribution<std::size_t> pick_prompt(0, P - 1);
    std::uniform_int_distribution<std::size_t> pick_a(0, V - 1);
    std::uniform_int_distribution<std::size_t> pick_b(0, V - 2);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    w.examples.reserve(config.n_pairs);
    for (std::size_t k = 0; k < config.n_pairs; ++k) {
        const std::size_t p = pick_prompt(rng);
        const std::size_t a = pick_a(rng);
        std::size_t b = pick_b(rng);
        if (b >= a) ++b;
        std::size_t better = p * V + a, worse = p * V + b;
        if (w.truth.quality[better] < w.truth.quality[worse]) std::swap(better, worse);
        const Stratum pair_stratum = std::max(w.truth.stratum[better], w.truth.stratum[worse]);
        const bool flip = unit(rng) < detail::flip_rate(config.flip_rates, pair_stratum);
        const std::size_t chosen = flip ? worse : better;
        const std::size_t rejected = flip ? better : worse;

        PreferenceExample ex;
        ex.prompt_id = detail::prompt_id(p);
        ex.prompt = "prompt " + std::to_string(p);
        ex.chosen = texts[p][chosen - p * V];
        ex.rejected = texts[p][rejected - p * V];
        ex.chosen_evidence = evidence[chosen];
        ex.rejected_evidence = evidence[rejected];
        w.examples.push_back(std::move(ex));

        w.truth.pair_prompt.push_back(p);
        w.truth.pair_better.push_back(better);
        w.truth.pair_worse.push_back(worse);
        w.truth.pair_stratum.push_back(pair_stratum);
        w.truth.flipped.push_back(flip);
    }
    return w;
}

/// Fraction of pairs whose label agrees with the quality ordering.
inline double label_accuracy(const World& w) {
    const auto flips = std::count(w.truth.flipped.begin(), w.truth.flipped.end(), true);
    return 1.0 - static_cast<double>(flips) / static_cast<double>(w.truth.flipped.size());
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    if (x.size() != y.size() || x.size() < 2) throw input_error("spearman needs two equal-length samples of size >= 2");
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Benchmark

enum class Arm { SftInit, Base, Cfa, UniformWeight, RandomWeight };

inline const std::vector<Arm>& all_arms() {
    static const std::vector<Arm> arms{Arm::SftInit, Arm::Base, Arm::Cfa, Arm::UniformWeight, Arm::RandomWeight};
    return arms;
}

inline std::string to_string(Arm a) {
    switch (a) {
    case Arm::SftInit: return "sft_init";
    case Arm::Base: return "base";
    case Arm::Cfa: return "cfa";
    case Arm::UniformWeight: return "uniform_weight";
    case Arm::RandomWeight: return "random_weight";
    }
    return "?";
}

inline Arm parse_arm(const std::string& s) {
    for (Arm a : all_arms())
        if (to_string(a) == s) return a;
    throw config_error("unknown arm '" + s + "'");
}

/// Everything run_benchmark needs besides the world.
struct BenchmarkConfig {
    TrainConfig train = default_train();
    LevelLadder ladder;
    SplitSpec split;
    ScorerConfig scorer;          // kind is taken from the world
    double data_fraction = 1.0;   // share of the train split used for training
    double uniform_weight = 0.65;

    /// SGD keeps per-pair weights proportional to their step size, unlike
    /// adaptive optimizers that renormalise them away.
    static TrainConfig default_train() {
        TrainConfig t;
        t.optimizer = OptimizerKind::Sgd;
        t.learning_rate = 0.05;
        t.beta = 1.0;
        t.steps = 20000;
        t.batch_size = 1;
        return t;
    }
};

struct ArmMetrics {
    double win_rate = 0.0;
    double expected_quality = 0.0;
    double preference_accuracy = 0.0;
    double mean_weight = 0.0;
};

struct ArmReport {
    Arm arm;
    ArmMetrics mean;                   // averaged over replicates
    std::vector<ArmMetrics> replicates;
};

struct BenchmarkReport {
    std::vector<ArmReport> arms;
    nlohmann::json config;

    const ArmReport& at(Arm a) const {
        for (const auto& r : arms)
            if (r.arm == a) return r;
        throw config_error("arm '" + to_string(a) + "' not in report");
    }
    bool has(Arm a) const {
        return std::any_of(arms.begin(), arms.end(), [a](const ArmReport& r) { return r.arm == a; });
    }
};

namespace detail {

/// Metrics of `policy` against the world's hidden quality, relative to `initial`.
inline ArmMetrics evaluate_policy(const World& w, const ToyPolicy& policy, const ToyPolicy& initial) {
    ArmMetrics m;
    const std::size_t P = w.vocab.prompt_count();
    double wins = 0.0, eq = 0.0, agree = 0.0, comparisons = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
        const std::size_t off = w.vocab.offset(p);
        const auto& q = w.truth.quality;
        const double g_new = q[off + policy.argmax(p)];
        const double g_old = q[off + initial.argmax(p)];
        wins += g_new > g_old ? 1.0 : (g_new == g_old ? 0.5 : 0.0);

        const auto pi = policy.probs(p);
        for (std::size_t y = 0; y < pi.size(); ++y) eq += pi[y] * q[off + y];

        const auto logits = policy.table().row(p);
        for (std::size_t a = 0; a < pi.size(); ++a) {
            for (std::size_t b = a + 1; b < pi.size(); ++b) {
                const double dq = q[off + a] - q[off + b];
                const double dl = logits[a] - logits[b];
                agree += (dl == 0.0) ? 0.5 : ((dq > 0.0) == (dl > 0.0) ? 1.0 : 0.0);
                comparisons += 1.0;
            }
        }
    }
    m.win_rate = wins / static_cast<double>(P);
    m.expected_quality = eq / static_cast<double>(P);
    m.preference_accuracy = agree / comparisons;
    return m;
}

} // namespace detail

inline nlohmann::json to_json(const WorldConfig& c) {
    return {{"n_prompts", c.n_prompts},
            {"vocab_size", c.vocab_size},
            {"evidence_kind", to_string(c.evidence_kind)},
            {"rho", c.rho},
            {"flip_rates", {{"core", c.flip_rates.core}, {"shell", c.flip_rates.shell}, {"outside", c.flip_rates.outside}}},
            {"n_pairs", c.n_pairs},
            {"seed", c.seed},
            {"bag_size", c.bag_size},
            {"bag_sharpness", c.bag_sharpness}};
}

inline nlohmann::json to_json(const TrainConfig& t) {
    return {{"learning_rate", t.learning_rate},
            {"steps", t.steps},
            {"batch_size", t.batch_size},
            {"beta", t.beta},
            {"seed", t.seed},
            {"optimizer", t.optimizer == OptimizerKind::Sgd ? "sgd" : "adamw"},
            {"adamw",
             {{"beta1", t.adamw.beta1}, {"beta2", t.adamw.beta2}, {"eps", t.adamw.eps}, {"weight_decay", t.adamw.weight_decay}}},
            {"ppo",
             {{"clip", t.ppo.clip},
              {"kl_coeff", t.ppo.kl_coeff},
              {"rollout_size", t.ppo.rollout_size},
              {"updates_per_rollout", t.ppo.updates_per_rollout}}},
            {"reduction", t.reduction == BatchReduction::Mean ? "mean" : "weighted_mean"}};
}

/// Trains every requested arm from the same zero-logit policy on one world.
inline BenchmarkReport run_benchmark(const World& world, const std::vector<Arm>& arms, const BenchmarkConfig& config) {
    if (arms.empty()) throw config_error("at least one arm is required");
    if (!(config.data_fraction > 0.0 && config.data_fraction <= 1.0))
        throw config_error("data_fraction must lie in (0, 1]");

    ScorerConfig scorer = config.scorer;
    scorer.kind = world.config.evidence_kind;

    std::vector<std::size_t> ids(world.examples.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    auto split = split_calibration(std::span<const std::size_t>(ids), config.split);

    std::vector<PreferenceExample> cal_pairs;
    for (auto i : split.calibration) cal_pairs.push_back(world.examples[i]);
    const auto calibrator = calibrate(score_pairs(cal_pairs, scorer), config.ladder);

    const auto n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.data_fraction * static_cast<double>(split.train.size()))));
    std::vector<PreferenceExample> train;
    for (std::size_t k = 0; k < n_train; ++k) train.push_back(world.examples[split.train[k]]);
    const auto weighted = weight_dataset(train, calibrator, scorer);

    std::vector<double> cfa_weights;
    for (const auto& x : weighted) cfa_weights.push_back(x.weight);
    std::vector<double> shuffled = cfa_weights;
    std::mt19937_64 perm_rng(config.train.seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(shuffled.begin(), shuffled.end(), perm_rng);

    const ToyPolicy initial(world.vocab);
    BenchmarkReport report;
    report.config = {{"world", to_json(world.config)},
                     {"train", to_json(config.train)},
                     {"ladder", to_json(config.ladder)},
                     {"calibration_size", config.split.calibration_size},
                     {"split_seed", config.split.seed},
                     {"data_fraction", config.data_fraction},
                     {"uniform_weight", config.uniform_weight},
                     {"thresholds", to_json(calibrator)["thresholds"]}};

    for (Arm arm : arms) {
        ArmMetrics m;
        if (arm == Arm::SftInit) {
            m = detail::evaluate_policy(world, initial, initial);
        } else {
            auto data = weighted;
            for (std::size_t i = 0; i < data.size(); ++i) {
                switch (arm) {
                case Arm::Base: data[i].weight = 1.0; break;
                case Arm::UniformWeight: data[i].weight = config.uniform_weight; break;
                case Arm::RandomWeight: data[i].weight = shuffled[i]; break;
                default: break;
                }
            }
            const auto trained = train_dpo(initial, data, config.train);
            m = detail::evaluate_policy(world, trained.model, initial);
            double s = 0.0;
            for (const auto& d : data) s += d.weight;
            m.mean_weight = s / static_cast<double>(data.size());
        }
        report.arms.push_back({arm, m, {m}});
    }
    return report;
}

/// Averages reports over `n_seeds` worlds (seeds base, base + 1, ...); the
/// training and split seeds follow the world seed.
inline BenchmarkReport run_replicated(const WorldConfig& world_config, const std::vector<Arm>& arms,
                                      const BenchmarkConfig& config, std::size_t n_seeds) {
    if (n_seeds == 0) throw config_error("n_seeds must be positive");
    BenchmarkReport merged;
    for (std::size_t s = 0; s < n_seeds; ++s) {
        WorldConfig wc = world_config;
        wc.seed = world_config.seed + s;
        BenchmarkConfig bc = config;
        bc.train.seed = config.train.seed + s;
        bc.split.seed = config.split.seed + s;
        const auto r = run_benchmark(generate_world(wc), arms, bc);
        if (s == 0) {
            merged = r;
            merged.config["n_seeds"] = n_seeds;
            continue;
        }
        for (std::size_t a = 0; a < r.arms.size(); ++a) merged.arms[a].replicates.push_back(r.arms[a].mean);
    }
    for (auto& ar : merged.arms) {
        ArmMetrics m;
        for (const auto& r : ar.replicates) {
            m.win_rate += r.win_rate;
            m.expected_quality += r.expected_quality;
            m.preference_accuracy += r.preference_accuracy;
            m.mean_weight += r.mean_weight;
        }
        const double n = static_cast<double>(ar.replicates.size());
        ar.mean = {m.win_rate / n, m.expected_quality / n, m.preference_accuracy / n, m.mean_weight / n};
    }
    return merged;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { DataFraction, CoverageLevel, EvidenceKind, ModelSizeProxy };

inline std::string to_string(SweepAxis a) {
    switch (a) {
    case SweepAxis::DataFraction: return "data_fraction";
    case SweepAxis::CoverageLevel: return "coverage_level";
    case SweepAxis::EvidenceKind: return "evidence_kind";
    case SweepAxis::ModelSizeProxy: return "model_size_proxy";
    }
    return "?";
}

inline SweepAxis parse_sweep_axis(const std::string& s) {
    for (auto a : {SweepAxis::DataFraction, SweepAxis::CoverageLevel, SweepAxis::EvidenceKind, SweepAxis::ModelSizeProxy})
        if (to_string(a) == s) return a;
    throw config_error("unknown sweep axis '" + s + "'");
}

/// Default grid per axis. EvidenceKind uses 0 = white-box, 1 = black-box;
/// ModelSizeProxy values are vocabulary sizes.
inline std::vector<double> default_grid(SweepAxis a) {
    switch (a) {
    case SweepAxis::DataFraction: return {0.05, 0.10, 0.20, 0.35, 0.50};
    case SweepAxis::CoverageLevel: return {0.6, 0.7, 0.8, 0.9};
    case SweepAxis::EvidenceKind: return {0.0, 1.0};
    case SweepAxis::ModelSizeProxy: return {4.0, 8.0, 16.0};
    }
    return {};
}

/// Two-rung ladder whose confidences are the coverage levels themselves,
/// evenly spaced: Core gets p2, Shell gets p1, Outside gets 2 p1 - p2
/// (floored at 0). With p2 close to p1 the three weights nearly coincide.
inline LevelLadder coverage_ladder(double p1, double p2) {
    return LevelLadder({{p1, p2}, {p2, p1}}, std::max(0.0, 2.0 * p1 - p2));
}

struct SweepPoint {
    double grid_value;
    BenchmarkReport report;
};

inline std::vector<SweepPoint> sweep(SweepAxis axis, const std::vector<double>& grid, const WorldConfig& world_config,
                                     const BenchmarkConfig& config, const std::vector<Arm>& arms, std::size_t n_seeds = 1) {
    if (grid.empty()) throw input_error("sweep grid must be non-empty");
    std::vector<SweepPoint> out;
    for (double v : grid) {
        WorldConfig wc = world_config;
        BenchmarkConfig bc = config;
        switch (axis) {
        case SweepAxis::DataFraction: bc.data_fraction = v; break;
        case SweepAxis::CoverageLevel: bc.ladder = coverage_ladder(config.ladder.rungs().front().level, v); break;
        case SweepAxis::EvidenceKind: wc.evidence_kind = v == 0.0 ? EvidenceKind::WhiteBox : EvidenceKind::BlackBox; break;
        case SweepAxis::ModelSizeProxy: wc.vocab_size = static_cast<std::size_t>(v); break;
        }
        auto report = run_replicated(wc, arms, bc, n_seeds);
        report.config["sweep_axis"] = to_string(axis);
        report.config["grid_value"] = v;
        out.push_back({v, std::move(report)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rendering

inline std::string format_report_table(const BenchmarkReport& r) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "arm" << std::right << std::setw(10) << "win_rate" << std::setw(18)
       << "expected_quality" << std::setw(21) << "preference_accuracy" << '\n';
    os << std::fixed << std::setprecision(4);
    for (const auto& a : r.arms)
        os << std::left << std::setw(16) << to_string(a.arm) << std::right << std::setw(10) << a.mean.win_rate
           << std::setw(18) << a.mean.expected_quality << std::setw(21) << a.mean.preference_accuracy << '\n';
    return os.str();
}

inline nlohmann::json to_json(const BenchmarkReport& r) {
    nlohmann::json arms = nlohmann::json::array();
    for (const auto& a : r.arms) {
        nlohmann::json reps = nlohmann::json::array();
        for (const auto& m : a.replicates) reps.push_back(m.win_rate);
        arms.push_back({{"arm", to_string(a.arm)},
                        {"win_rate", a.mean.win_rate},
                        {"expected_quality", a.mean.expected_quality},
                        {"preference_accuracy", a.mean.preference_accuracy},
                        {"mean_weight", a.mean.mean_weight},
                        {"win_rate_per_seed", reps}});
    }
    return {{"arms", arms}, {"config", r.config}};
}

/// (grid_point, arm, metric, value) rows for plotting.
inline std::string sweep_triples_csv(const std::vector<SweepPoint>& points) {
    std::ostringstream os;
    os << "grid_point,arm,metric,value\n";
    os << std::setprecision(17);
    for (const auto& pt : points)
        for (const auto& a : pt.report.arms) {
            os << pt.grid_value << ',' << to_string(a.arm) << ",win_rate," << a.mean.win_rate << '\n';
            os << pt.grid_value << ',' << to_string(a.arm) << ",expected_quality," << a.mean.expected_quality << '\n';
            os << pt.grid_value << ',' << to_string(a.arm) << ",preference_accuracy," << a.mean.preference_accuracy << '\n';
        }
    return os.str();
}

} // namespace cfa
