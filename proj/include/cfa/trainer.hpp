#pragma once

// Training loops for both alignment branches:
//   DPO-style: update the policy directly with the weighted DPO loss.
//   PPO-style: fit a reward table with the weighted RM loss, then improve
//              the policy against it with a single-step (bandit) clipped
//              surrogate and a KL penalty to the reference policy.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cfa/dataset.hpp"
#include "cfa/error.hpp"
#include "cfa/losses.hpp"
#include "cfa/models.hpp"

namespace cfa {

struct PpoConfig {
    double clip = 0.2;
    double kl_coeff = 0.1;
    std::size_t rollout_size = 16;      // samples per prompt per epoch
    std::size_t updates_per_rollout = 4;

    friend bool operator==(const PpoConfig&, const PpoConfig&) = default;
};

struct TrainConfig {
    double learning_rate = 1e-2;
    std::size_t steps = 1000;
    std::size_t batch_size = 1;
    double beta = 0.1;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::AdamW;
    AdamWConfig adamw;
    PpoConfig ppo;
    BatchReduction reduction = BatchReduction::Mean;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw config_error("learning_rate must be > 0");
        if (steps == 0) throw config_error("steps must be positive");
        if (batch_size == 0) throw config_error("batch_size must be positive");
        if (!(beta > 0.0) || !std::isfinite(beta)) throw config_error("beta must be > 0");
        if (!(ppo.clip > 0.0 && ppo.clip < 1.0)) throw config_error("ppo clip must lie in (0, 1)");
        if (!(ppo.kl_coeff >= 0.0) || !std::isfinite(ppo.kl_coeff)) throw config_error("kl_coeff must be >= 0");
        if (ppo.rollout_size == 0 || ppo.updates_per_rollout == 0)
            throw config_error("ppo rollout_size and updates_per_rollout must be positive");
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

template <class Model>
struct TrainResult {
    Model model;
    std::vector<double> trace;  // mean batch loss (or mean reward for PPO) per step
    nlohmann::json optimizer_state;
};

/// One weighted pair resolved against a table.
struct ResolvedPair {
    Cell chosen;
    Cell rejected;
    double u;
};

/// Looks up every pair before any training happens.
inline std::vector<ResolvedPair> resolve_pairs(const ResponseTable& table, std::span<const WeightedPreferenceExample> data) {
    std::vector<ResolvedPair> out;
    out.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& w = data[i];
        auto c = table.find(w.example.prompt_id, w.example.chosen);
        auto r = table.find(w.example.prompt_id, w.example.rejected);
        if (!c || !r)
            throw lookup_error("pair " + std::to_string(i + 1) + " (prompt '" + w.example.prompt_id +
                               "') references a response outside the model vocabulary");
        if (c->prompt != r->prompt) throw lookup_error("pair " + std::to_string(i + 1) + " spans two prompts");
        out.push_back({*c, *r, w.weight});
    }
    return out;
}

// ---------------------------------------------------------------------------
// DPO

/// Weighted DPO objective over `pairs` (mean of u-scaled losses).
inline double dpo_objective(const ToyPolicy& policy, const ToyPolicy& reference, std::span<const ResolvedPair> pairs,
                            double beta) {
    if (pairs.empty()) throw input_error("no pairs");
    double total = 0.0;
    for (const auto& p : pairs) {
        DpoInputs in{policy.log_prob(p.chosen), policy.log_prob(p.rejected), reference.log_prob(p.chosen),
                     reference.log_prob(p.rejected), beta, p.u};
        total += dpo_loss(in).loss;
    }
    return total / static_cast<double>(pairs.size());
}

/// Gradient of the batch objective w.r.t. the policy logits, plus the
/// batch loss. Only the chosen and rejected logits of each pair move:
/// dΔ/dl = e(y+) - e(y-) because the softmax normaliser cancels.
inline double dpo_parameter_gradient(const ToyPolicy& policy, const ToyPolicy& reference,
                                     std::span<const ResolvedPair> batch, double beta, BatchReduction reduction,
                                     SparseGrad& grad) {
    std::vector<DpoInputs> inputs;
    inputs.reserve(batch.size());
    for (const auto& p : batch)
        inputs.push_back({policy.log_prob(p.chosen), policy.log_prob(p.rejected), reference.log_prob(p.chosen),
                          reference.log_prob(p.rejected), beta, p.u});
    const auto bl = batch_loss(std::span<const DpoInputs>(inputs), reduction);
    grad.clear();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        grad.emplace_back(batch[i].chosen.flat, bl.gradients[i]);
        grad.emplace_back(batch[i].rejected.flat, -bl.gradients[i]);
    }
    return bl.mean_loss;
}

inline std::vector<double> dense_gradient(const SparseGrad& sparse, std::size_t n) {
    std::vector<double> g(n, 0.0);
    for (const auto& [i, v] : sparse) g[i] += v;
    return g;
}

namespace detail {

inline std::vector<std::size_t> sample_batch(std::mt19937_64& rng, std::size_t n, std::size_t batch) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = pick(rng);
    return idx;
}

} // namespace detail

/// π_ref is the policy as passed in; it is never modified.
inline TrainResult<ToyPolicy> train_dpo(const ToyPolicy& initial, std::span<const WeightedPreferenceExample> data,
                                        const TrainConfig& config) {
    config.validate();
    if (data.empty()) throw input_error("train_dpo needs at least one pair");
    const auto pairs = resolve_pairs(initial.table(), data);
    const ToyPolicy& reference = initial;

    TrainResult<ToyPolicy> out{initial, {}, {}};
    Optimizer opt(config.optimizer, config.learning_rate, config.adamw);
    std::mt19937_64 rng(config.seed);
    std::vector<ResolvedPair> batch(config.batch_size);
    SparseGrad grad;
    out.trace.reserve(config.steps);
    for (std::size_t step = 0; step < config.steps; ++step) {
        const auto idx = detail::sample_batch(rng, pairs.size(), config.batch_size);
        for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = pairs[idx[i]];
        const double loss = dpo_parameter_gradient(out.model, reference, batch, config.beta, config.reduction, grad);
        opt.step(out.model.parameters(), grad);
        out.trace.push_back(loss);
    }
    out.optimizer_state = opt.state();
    return out;
}

inline TrainResult<ToyPolicy> train_dpo(const ToyPolicy& initial, const std::vector<WeightedPreferenceExample>& data,
                                        const TrainConfig& config) {
    return train_dpo(initial, std::span<const WeightedPreferenceExample>(data), config);
}

// ---------------------------------------------------------------------------
// Reward model

inline TrainResult<ToyRewardModel> train_reward_model(const ToyRewardModel& initial,
                                                      std::span<const WeightedPreferenceExample> data,
                                                      const TrainConfig& config) {
    config.validate();
    if (data.empty()) throw input_error("train_reward_model needs at least one pair");
    const auto pairs = resolve_pairs(initial.table(), data);

    TrainResult<ToyRewardModel> out{initial, {}, {}};
    Optimizer opt(config.optimizer, config.learning_rate, config.adamw);
    std::mt19937_64 rng(config.seed);
    std::vector<RmInputs> inputs(config.batch_size);
    SparseGrad grad;
    out.trace.reserve(config.steps);
    for (std::size_t step = 0; step < config.steps; ++step) {
        const auto idx = detail::sample_batch(rng, pairs.size(), config.batch_size);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const auto& p = pairs[idx[i]];
            inputs[i] = {out.model.reward(p.chosen), out.model.reward(p.rejected), p.u};
        }
        const auto bl = batch_loss(std::span<const RmInputs>(inputs), config.reduction);
        grad.clear();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            grad.emplace_back(pairs[idx[i]].chosen.flat, bl.gradients[i].dr_plus);
            grad.emplace_back(pairs[idx[i]].rejected.flat, bl.gradients[i].dr_minus);
        }
        opt.step(out.model.parameters(), grad);
        out.trace.push_back(bl.mean_loss);
    }
    out.optimizer_state = opt.state();
    return out;
}

inline TrainResult<ToyRewardModel> train_reward_model(const ToyRewardModel& initial,
                                                      const std::vector<WeightedPreferenceExample>& data,
                                                      const TrainConfig& config) {
    return train_reward_model(initial, std::span<const WeightedPreferenceExample>(data), config);
}

// ---------------------------------------------------------------------------
// Bandit PPO

/// d/dratio of min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A).
/// Zero when the clipped branch is the active minimum.
inline double clipped_surrogate_slope(double ratio, double advantage, double eps) {
    if (advantage >= 0.0) return ratio > 1.0 + eps ? 0.0 : advantage;
    return ratio < 1.0 - eps ? 0.0 : advantage;
}

inline double expected_reward(const ToyPolicy& policy, const ToyRewardModel& rm, std::size_t prompt,
                              std::size_t rm_prompt) {
    const auto pi = policy.probs(prompt);
    const auto r = rm.table().row(rm_prompt);
    double e = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i) e += pi[i] * r[i];
    return e;
}

/// KL(π_θ || π_ref) for one prompt.
inline double kl_divergence(const ToyPolicy& policy, const ToyPolicy& reference, std::size_t prompt) {
    const auto lp = policy.log_probs(prompt);
    const auto lq = reference.log_probs(prompt);
    double kl = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
    return kl;
}

struct PpoResult {
    ToyPolicy model;
    std::vector<double> reward_trace;  // mean E_π[r] over prompts, entry 0 is the initial policy
    std::vector<double> kl_trace;      // mean KL(π || π_ref), same indexing
    nlohmann::json optimizer_state;
};

/// `config.steps` epochs; each epoch samples `rollout_size` responses per
/// prompt from the frozen epoch-start policy, uses advantage
/// r(x, y) - mean_y' r(x, y'), and takes `updates_per_rollout` optimizer
/// steps on the clipped surrogate plus kl_coeff * KL(π || π_ref).
inline PpoResult train_ppo(const ToyPolicy& initial, const ToyRewardModel& rm, std::span<const std::string> prompts,
                           const TrainConfig& config) {
    config.validate();
    if (prompts.empty()) throw input_error("train_ppo needs at least one prompt");

    struct PromptRef {
        std::size_t policy_row;
        std::size_t rm_row;
        std::vector<double> advantage;
    };
    std::vector<PromptRef> refs;
    for (const auto& id : prompts) {
        auto p = initial.table().find_prompt(id);
        auto q = rm.table().find_prompt(id);
        if (!p || !q) throw lookup_error("prompt '" + id + "' missing from policy or reward model");
        if (initial.table().responses(*p) != rm.table().responses(*q))
            throw lookup_error("policy and reward model vocabularies differ for prompt '" + id + "'");
        const auto r = rm.table().row(*q);
        double mean = 0.0;
        for (double x : r) mean += x;
        mean /= static_cast<double>(r.size());
        std::vector<double> adv(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) adv[i] = r[i] - mean;
        refs.push_back({*p, *q, std::move(adv)});
    }

    const ToyPolicy& reference = initial;
    PpoResult out{initial, {}, {}, {}};
    Optimizer opt(config.optimizer, config.learning_rate, config.adamw);
    std::mt19937_64 rng(config.seed);

    auto record = [&] {
        double er = 0.0, kl = 0.0;
        for (const auto& pr : refs) {
            er += expected_reward(out.model, rm, pr.policy_row, pr.rm_row);
            kl += kl_divergence(out.model, reference, pr.policy_row);
        }
        out.reward_trace.push_back(er / static_cast<double>(refs.size()));
        out.kl_trace.push_back(kl / static_cast<double>(refs.size()));
    };
    record();

    const double n_samples = static_cast<double>(config.ppo.rollout_size);
    const double n_prompts = static_cast<double>(refs.size());
    SparseGrad grad;
    std::vector<std::vector<std::size_t>> rollouts(refs.size());
    std::vector<std::vector<double>> old_probs(refs.size());
    for (std::size_t epoch = 0; epoch < config.steps; ++epoch) {
        for (std::size_t k = 0; k < refs.size(); ++k) {
            old_probs[k] = out.model.probs(refs[k].policy_row);
            std::discrete_distribution<std::size_t> draw(old_probs[k].begin(), old_probs[k].end());
            rollouts[k].resize(config.ppo.rollout_size);
            for (auto& y : rollouts[k]) y = draw(rng);
        }
        for (std::size_t u = 0; u < config.ppo.updates_per_rollout; ++u) {
            grad.clear();
            for (std::size_t k = 0; k < refs.size(); ++k) {
                const auto& pr = refs[k];
                const auto pi = out.model.probs(pr.policy_row);
                const auto lp = out.model.log_probs(pr.policy_row);
                const auto lq = reference.log_probs(pr.policy_row);
                const std::size_t offset = out.model.table().offset(pr.policy_row);
                std::vector<double> g(pi.size(), 0.0);
                // Surrogate: -(1/N) Σ slope * ratio * (e_y - π)
                for (std::size_t y : rollouts[k]) {
                    const double ratio = pi[y] / old_probs[k][y];
                    const double c = clipped_surrogate_slope(ratio, pr.advantage[y], config.ppo.clip) * ratio / n_samples;
                    if (c == 0.0) continue;
                    for (std::size_t i = 0; i < pi.size(); ++i) g[i] += c * pi[i];
                    g[y] -= c;
                }
                // KL penalty: ∂KL/∂l_i = π_i (log π_i - log ref_i - KL)
                if (config.ppo.kl_coeff > 0.0) {
                    double kl = 0.0;
                    for (std::size_t i = 0; i < pi.size(); ++i) kl += pi[i] * (lp[i] - lq[i]);
                    for (std::size_t i = 0; i < pi.size(); ++i)
                        g[i] += config.ppo.kl_coeff * pi[i] * (lp[i] - lq[i] - kl);
                }
                for (std::size_t i = 0; i < g.size(); ++i) grad.emplace_back(offset + i, g[i] / n_prompts);
            }
            opt.step(out.model.parameters(), grad);
        }
        record();
    }
    out.optimizer_state = opt.state();
    return out;
}

inline PpoResult train_ppo(const ToyPolicy& initial, const ToyRewardModel& rm, const std::vector<std::string>& prompts,
                           const TrainConfig& config) {
    return train_ppo(initial, rm, std::span<const std::string>(prompts), config);
}

} // namespace cfa
