#pragma once

// Tabular (prompt x response) models: a softmax policy over each prompt's
// response list and a reward table with the same layout. Parameters live
// in one flat vector so an optimizer can treat them uniformly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "cfa/dataset.hpp"
#include "cfa/error.hpp"

namespace cfa {

/// Location of one (prompt, response) cell.
struct Cell {
    std::size_t prompt;    // prompt index
    std::size_t response;  // index within the prompt's vocabulary
    std::size_t flat;      // index into the parameter vector
};

/// Per-prompt response vocabularies plus one real per cell.
class ResponseTable {
public:
    /// Appends a prompt. `values` defaults to zeros.
    void add_prompt(const std::string& prompt_id, std::vector<std::string> responses,
                    std::vector<double> values = {}) {
        if (prompt_index_.contains(prompt_id)) throw config_error("duplicate prompt '" + prompt_id + "'");
        if (responses.empty()) throw config_error("prompt '" + prompt_id + "' has no responses");
        if (values.empty()) values.assign(responses.size(), 0.0);
        if (values.size() != responses.size()) throw config_error("one value per response required");
        Prompt p{prompt_id, std::move(responses), {}, values_.size()};
        for (std::size_t i = 0; i < p.responses.size(); ++i)
            if (!p.index.emplace(p.responses[i], i).second)
                throw config_error("duplicate response in prompt '" + prompt_id + "'");
        prompt_index_.emplace(prompt_id, prompts_.size());
        prompts_.push_back(std::move(p));
        values_.insert(values_.end(), values.begin(), values.end());
    }

    std::size_t prompt_count() const noexcept { return prompts_.size(); }
    const std::string& prompt_id(std::size_t p) const { return prompts_.at(p).id; }
    const std::vector<std::string>& responses(std::size_t p) const { return prompts_.at(p).responses; }

    std::optional<std::size_t> find_prompt(const std::string& prompt_id) const {
        auto it = prompt_index_.find(prompt_id);
        if (it == prompt_index_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<Cell> find(const std::string& prompt_id, const std::string& response) const {
        auto p = find_prompt(prompt_id);
        if (!p) return std::nullopt;
        const auto& pr = prompts_[*p];
        auto it = pr.index.find(response);
        if (it == pr.index.end()) return std::nullopt;
        return Cell{*p, it->second, pr.offset + it->second};
    }

    Cell at(const std::string& prompt_id, const std::string& response) const {
        auto c = find(prompt_id, response);
        if (!c) throw lookup_error("unknown (prompt, response) pair ('" + prompt_id + "', '" + response + "')");
        return *c;
    }

    std::span<const double> row(std::size_t p) const {
        const auto& pr = prompts_.at(p);
        return {values_.data() + pr.offset, pr.responses.size()};
    }
    std::span<double> row(std::size_t p) {
        const auto& pr = prompts_.at(p);
        return {values_.data() + pr.offset, pr.responses.size()};
    }
    std::size_t offset(std::size_t p) const { return prompts_.at(p).offset; }

    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    friend bool operator==(const ResponseTable& a, const ResponseTable& b) {
        if (a.values_ != b.values_ || a.prompts_.size() != b.prompts_.size()) return false;
        for (std::size_t i = 0; i < a.prompts_.size(); ++i)
            if (a.prompts_[i].id != b.prompts_[i].id || a.prompts_[i].responses != b.prompts_[i].responses) return false;
        return true;
    }

private:
    struct Prompt {
        std::string id;
        std::vector<std::string> responses;
        std::unordered_map<std::string, std::size_t> index;
        std::size_t offset;
    };
    std::vector<Prompt> prompts_;
    std::unordered_map<std::string, std::size_t> prompt_index_;
    std::vector<double> values_;
};

/// log-softmax of a row, stabilised by subtracting the maximum.
inline std::vector<double> log_softmax(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - mx);
    const double lse = mx + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
    auto out = log_softmax(logits);
    for (double& x : out) x = std::exp(x);
    return out;
}

/// π(y|x) = softmax over the prompt's vocabulary.
class ToyPolicy {
public:
    ToyPolicy() = default;
    explicit ToyPolicy(ResponseTable table) : table_(std::move(table)) {}

    ResponseTable& table() noexcept { return table_; }
    const ResponseTable& table() const noexcept { return table_; }
    std::vector<double>& parameters() noexcept { return table_.values(); }
    const std::vector<double>& parameters() const noexcept { return table_.values(); }

    std::vector<double> log_probs(std::size_t prompt) const { return log_softmax(table_.row(prompt)); }
    std::vector<double> probs(std::size_t prompt) const { return softmax(table_.row(prompt)); }

    double log_prob(const Cell& c) const {
        const auto row = table_.row(c.prompt);
        return log_softmax(row)[c.response];
    }

    /// Index of the largest logit; ties go to the lowest index.
    std::size_t argmax(std::size_t prompt) const {
        const auto row = table_.row(prompt);
        return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }

    friend bool operator==(const ToyPolicy&, const ToyPolicy&) = default;

private:
    ResponseTable table_;
};

inline double policy_logprob(const ToyPolicy& policy, const std::string& prompt_id, const std::string& response) {
    return policy.log_prob(policy.table().at(prompt_id, response));
}

/// r(x, y) lookup table.
class ToyRewardModel {
public:
    ToyRewardModel() = default;
    explicit ToyRewardModel(ResponseTable table) : table_(std::move(table)) {}

    ResponseTable& table() noexcept { return table_; }
    const ResponseTable& table() const noexcept { return table_; }
    std::vector<double>& parameters() noexcept { return table_.values(); }
    const std::vector<double>& parameters() const noexcept { return table_.values(); }

    double reward(const Cell& c) const { return table_.values()[c.flat]; }
    double reward(const std::string& prompt_id, const std::string& response) const {
        return reward(table_.at(prompt_id, response));
    }

    friend bool operator==(const ToyRewardModel&, const ToyRewardModel&) = default;

private:
    ResponseTable table_;
};

/// Vocabulary for every prompt seen in `data`, responses in order of first
/// appearance, all values zero.
template <class Range, class Proj>
ResponseTable table_from_examples(const Range& data, Proj&& proj) {
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<std::string>> vocab;
    for (const auto& item : data) {
        const PreferenceExample& ex = proj(item);
        auto [it, fresh] = vocab.try_emplace(ex.prompt_id);
        if (fresh) order.push_back(ex.prompt_id);
        for (const auto* r : {&ex.chosen, &ex.rejected})
            if (std::find(it->second.begin(), it->second.end(), *r) == it->second.end()) it->second.push_back(*r);
    }
    ResponseTable table;
    for (const auto& id : order) table.add_prompt(id, std::move(vocab[id]));
    return table;
}

inline ResponseTable table_from_examples(std::span<const WeightedPreferenceExample> data) {
    return table_from_examples(data, [](const WeightedPreferenceExample& w) -> const PreferenceExample& { return w.example; });
}

inline ResponseTable table_from_examples(std::span<const PreferenceExample> data) {
    return table_from_examples(data, [](const PreferenceExample& e) -> const PreferenceExample& { return e; });
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { Sgd, AdamW };

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

/// Gradient entries (flat index, value); repeated indices accumulate.
using SparseGrad = std::vector<std::pair<std::size_t, double>>;

/// Plain SGD or decoupled-weight-decay Adam over a flat parameter vector.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate, AdamWConfig adam = {})
        : kind_(kind), lr_(learning_rate), adam_(adam) {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw config_error("learning rate must be positive");
    }

    void step(std::vector<double>& params, const SparseGrad& grad) {
        ++t_;
        if (kind_ == OptimizerKind::Sgd) {
            for (const auto& [i, g] : grad) params[i] -= lr_ * g;
            return;
        }
        if (m_.size() != params.size()) {
            m_.assign(params.size(), 0.0);
            v_.assign(params.size(), 0.0);
        }
        dense_.assign(params.size(), 0.0);
        for (const auto& [i, g] : grad) dense_[i] += g;
        const double bc1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = dense_[i];
            m_[i] = adam_.beta1 * m_[i] + (1.0 - adam_.beta1) * g;
            v_[i] = adam_.beta2 * v_[i] + (1.0 - adam_.beta2) * g * g;
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            params[i] -= lr_ * (mhat / (std::sqrt(vhat) + adam_.eps) + adam_.weight_decay * params[i]);
        }
    }

    OptimizerKind kind() const noexcept { return kind_; }
    std::uint64_t step_count() const noexcept { return t_; }
    const std::vector<double>& first_moment() const noexcept { return m_; }
    const std::vector<double>& second_moment() const noexcept { return v_; }

    nlohmann::json state() const {
        return {{"kind", kind_ == OptimizerKind::Sgd ? "sgd" : "adamw"},
                {"learning_rate", lr_},
                {"step", t_},
                {"m", m_},
                {"v", v_}};
    }

private:
    OptimizerKind kind_;
    double lr_;
    AdamWConfig adam_;
    std::uint64_t t_ = 0;
    std::vector<double> m_, v_, dense_;
};

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const ResponseTable& t) {
    nlohmann::json prompts = nlohmann::json::array();
    for (std::size_t p = 0; p < t.prompt_count(); ++p) {
        const auto row = t.row(p);
        prompts.push_back({{"prompt_id", t.prompt_id(p)},
                           {"responses", t.responses(p)},
                           {"values", std::vector<double>(row.begin(), row.end())}});
    }
    return prompts;
}

inline ResponseTable table_from_json(const nlohmann::json& j) {
    ResponseTable t;
    for (const auto& p : j)
        t.add_prompt(p.at("prompt_id").get<std::string>(), p.at("responses").get<std::vector<std::string>>(),
                     p.at("values").get<std::vector<double>>());
    return t;
}

} // namespace cfa
