#pragma once

// Preference losses with closed-form gradients in their scalar inputs.
//
//   DPO:  L = -u * log σ(β Δ),  Δ = [log πθ(y+) - log πref(y+)] - [log πθ(y-) - log πref(y-)]
//   RM:   L = -u * log σ(r+ - r-)
//
// u = 1 gives the unweighted objectives.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cfa/error.hpp"

namespace cfa {

/// log σ(z) = min(z, 0) - log1p(exp(-|z|)); no overflow for any finite z.
inline double log_sigmoid(double z) {
    if (!std::isfinite(z)) throw input_error("log_sigmoid argument must be finite");
    return std::fmin(z, 0.0) - std::log1p(std::exp(-std::fabs(z)));
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct DpoInputs {
    double logp_theta_plus;
    double logp_theta_minus;
    double logp_ref_plus;
    double logp_ref_minus;
    double beta = 0.1;
    double u = 1.0;

    void validate() const {
        for (double lp : {logp_theta_plus, logp_theta_minus, logp_ref_plus, logp_ref_minus})
            if (!std::isfinite(lp) || lp > 0.0) throw input_error("log-likelihoods must be finite and <= 0");
        if (!std::isfinite(beta) || beta <= 0.0) throw input_error("beta must be positive");
        if (!(u >= 0.0 && u <= 1.0)) throw input_error("weight u must lie in [0, 1]");
    }
};

struct RmInputs {
    double r_plus;
    double r_minus;
    double u = 1.0;

    void validate() const {
        if (!std::isfinite(r_plus) || !std::isfinite(r_minus)) throw input_error("rewards must be finite");
        if (!(u >= 0.0 && u <= 1.0)) throw input_error("weight u must lie in [0, 1]");
    }
};

inline double delta(const DpoInputs& in) {
    in.validate();
    return (in.logp_theta_plus - in.logp_ref_plus) - (in.logp_theta_minus - in.logp_ref_minus);
}

struct DpoLoss {
    double loss;
    double dloss_ddelta;
};

struct RmLoss {
    double loss;
    double dloss_dr_plus;
    double dloss_dr_minus;
};

/// Loss and gradient directly from a margin. Shared by dpo_loss and the
/// trainers, which already hold Δ.
inline DpoLoss dpo_loss_from_delta(double margin, double beta, double u) {
    // u multiplies the finished unit-weight terms, so scaling in u is exact.
    const double z = beta * margin;
    return {u * -log_sigmoid(z), u * (-beta * sigmoid(-z))};
}

inline DpoLoss dpo_loss(const DpoInputs& in) {
    return dpo_loss_from_delta(delta(in), in.beta, in.u);
}

inline RmLoss rm_loss(const RmInputs& in) {
    in.validate();
    const double z = in.r_plus - in.r_minus;
    const double g = sigmoid(-z);
    return {in.u * -log_sigmoid(z), in.u * -g, in.u * g};
}

/// Per-pair gradients are already divided by the batch size.
template <class Grad>
struct BatchLoss {
    double mean_loss = 0.0;
    std::vector<Grad> gradients;
};

enum class BatchReduction {
    Mean,          // sum of u-scaled losses / batch size
    WeightedMean,  // sum of u-scaled losses / sum of u (0 when every u is 0)
};

namespace detail {

template <class Grad, class Inputs, class Fn>
BatchLoss<Grad> reduce_batch(std::span<const Inputs> batch, BatchReduction reduction, Fn&& per_pair) {
    if (batch.empty()) throw input_error("batch must be non-empty");
    double denom = static_cast<double>(batch.size());
    if (reduction == BatchReduction::WeightedMean) {
        denom = 0.0;
        for (const auto& in : batch) denom += in.u;
    }
    BatchLoss<Grad> out;
    out.gradients.reserve(batch.size());
    double total = 0.0;
    for (const auto& in : batch) {
        auto [loss, grad] = per_pair(in);
        total += loss;
        out.gradients.push_back(grad);
    }
    if (denom == 0.0) {
        for (auto& g : out.gradients) g = Grad{};
        return out;
    }
    out.mean_loss = total / denom;
    for (auto& g : out.gradients) g = g / denom;
    return out;
}

} // namespace detail

struct RmGrad {
    double dr_plus = 0.0;
    double dr_minus = 0.0;

    friend RmGrad operator/(RmGrad g, double d) { return {g.dr_plus / d, g.dr_minus / d}; }
};

inline BatchLoss<double> batch_loss(std::span<const DpoInputs> batch, BatchReduction reduction = BatchReduction::Mean) {
    return detail::reduce_batch<double>(batch, reduction, [](const DpoInputs& in) {
        const auto l = dpo_loss(in);
        return std::pair{l.loss, l.dloss_ddelta};
    });
}

inline BatchLoss<RmGrad> batch_loss(std::span<const RmInputs> batch, BatchReduction reduction = BatchReduction::Mean) {
    return detail::reduce_batch<RmGrad>(batch, reduction, [](const RmInputs& in) {
        const auto l = rm_loss(in);
        return std::pair{l.loss, RmGrad{l.dloss_dr_plus, l.dloss_dr_minus}};
    });
}

} // namespace cfa
