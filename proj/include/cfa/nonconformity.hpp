#pragma once

// Nonconformity scores for a single response. Lower means more typical.
//
// White-box: negative log-likelihood from per-token log-probabilities.
// Black-box: built from a bag of repeated generations for the same prompt,
//   s(y) = -Freq(y) + lambda1 * NE(bag) - lambda2 * Sim(y, y_top)

#include <algorithm>
#include <cctype>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <type_traits>
#include <string_view>
#include <vector>

#include "cfa/error.hpp"

namespace cfa {

enum class SimilarityKind { TokenJaccard };
enum class TokenizerKind { WhitespaceLower };

struct BlackBoxConfig {
    double lambda1 = 1.0;  // weight of normalized entropy
    double lambda2 = 1.0;  // weight of similarity to the top sample
    SimilarityKind similarity = SimilarityKind::TokenJaccard;
    TokenizerKind tokenizer = TokenizerKind::WhitespaceLower;

    void validate() const {
        if (!std::isfinite(lambda1) || lambda1 < 0.0)
            throw config_error("lambda1 must be finite and >= 0");
        if (!std::isfinite(lambda2) || lambda2 < 0.0)
            throw config_error("lambda2 must be finite and >= 0");
    }

    friend bool operator==(const BlackBoxConfig&, const BlackBoxConfig&) = default;
};

/// Splits on ASCII whitespace and lowercases each token.
inline std::vector<std::string> tokenize(std::string_view text, TokenizerKind = TokenizerKind::WhitespaceLower) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) tokens.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

/// Repeated generations for one prompt, with exact-string counts.
///
/// y_top is the most frequent sample; ties go to the lexicographically
/// smallest string so the choice does not depend on sample order.
class SampleBag {
public:
    explicit SampleBag(std::vector<std::string> samples) : samples_(std::move(samples)) {
        if (samples_.empty()) throw input_error("sample bag must contain at least one sample");
        for (const auto& s : samples_) ++counts_[s];
        // std::map iterates in lexicographic order, so the first maximum wins ties.
        std::size_t best = 0;
        for (const auto& [text, n] : counts_) {
            if (n > best) {
                best = n;
                top_ = text;
            }
        }
    }

    const std::vector<std::string>& samples() const noexcept { return samples_; }
    const std::map<std::string, std::size_t>& counts() const noexcept { return counts_; }
    const std::string& top() const noexcept { return top_; }
    std::size_t size() const noexcept { return samples_.size(); }

private:
    std::vector<std::string> samples_;
    std::map<std::string, std::size_t> counts_;
    std::string top_;
};

/// -sum(logp), optionally divided by the token count. Always >= 0.
inline double score_whitebox(std::span<const double> token_logprobs, bool length_normalize = false) {
    if (token_logprobs.empty()) throw input_error("token_logprobs must be non-empty");
    double nll = 0.0;
    for (double lp : token_logprobs) {
        if (!std::isfinite(lp)) throw input_error("token log-probability must be finite");
        if (lp > 0.0) throw input_error("token log-probability must be <= 0");
        nll -= lp;
    }
    if (length_normalize) nll /= static_cast<double>(token_logprobs.size());
    return nll;
}

/// Exact count of y among the bag's samples.
inline std::size_t frequency(const SampleBag& bag, std::string_view y) {
    auto it = bag.counts().find(std::string(y));
    return it == bag.counts().end() ? 0 : it->second;
}

/// Shannon entropy of the empirical distribution over distinct samples,
/// divided by log(m) where m is the number of draws. 0 for m == 1.
inline double normalized_entropy(const SampleBag& bag) {
    const auto m = static_cast<double>(bag.size());
    if (bag.size() <= 1 || bag.counts().size() == 1) return 0.0;
    double h = 0.0;
    for (const auto& [text, n] : bag.counts()) {
        const double p = static_cast<double>(n) / m;
        h -= p * std::log(p);
    }
    return std::clamp(h / std::log(m), 0.0, 1.0);
}

/// |A ∩ B| / |A ∪ B| over token sets; 1 when both are empty.
inline double token_jaccard(std::string_view a, std::string_view b, TokenizerKind tok = TokenizerKind::WhitespaceLower) {
    const auto ta = tokenize(a, tok);
    const auto tb = tokenize(b, tok);
    const std::set<std::string> sa(ta.begin(), ta.end());
    const std::set<std::string> sb(tb.begin(), tb.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    const std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double similarity(std::string_view y, std::string_view y_top, const BlackBoxConfig& config = {}) {
    switch (config.similarity) {
    case SimilarityKind::TokenJaccard:
        return token_jaccard(y, y_top, config.tokenizer);
    }
    throw config_error("unknown similarity kind");
}

/// Any callable (text, text) -> similarity in [0, 1].
template <class F>
concept SimilarityMeasure = std::invocable<F, std::string_view, std::string_view> &&
    std::convertible_to<std::invoke_result_t<F, std::string_view, std::string_view>, double>;

template <SimilarityMeasure Sim>
double score_blackbox(const SampleBag& bag, std::string_view y, double lambda1, double lambda2, Sim&& sim) {
    const auto freq = static_cast<double>(frequency(bag, y));
    return -freq + lambda1 * normalized_entropy(bag) - lambda2 * sim(y, std::string_view(bag.top()));
}

inline double score_blackbox(const SampleBag& bag, std::string_view y, const BlackBoxConfig& config = {}) {
    config.validate();
    return score_blackbox(bag, y, config.lambda1, config.lambda2,
                          [&config](std::string_view a, std::string_view b) { return similarity(a, b, config); });
}

} // namespace cfa
