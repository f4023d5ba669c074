#pragma once

// Seeded generators and numeric oracles shared by the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cfa/dataset.hpp"

namespace cfa::testkit {

inline double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

/// Relative error with an absolute floor, for quantities that can be ~0.
inline double rel_err_floor(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Multiset of size n drawn from a small pool so ties are common.
inline std::vector<double> tied_multiset(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<int> pool_size(1, 12);
    const int k = pool_size(rng);
    std::uniform_real_distribution<double> val(-5.0, 5.0);
    std::vector<double> pool(static_cast<std::size_t>(k));
    for (auto& v : pool) v = val(rng);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<double> out(n);
    for (auto& v : out) v = pool[pick(rng)];
    return out;
}

inline PreferenceExample white_pair(const std::string& pid, const std::string& a, const std::string& b,
                                    std::vector<double> la, std::vector<double> lb) {
    PreferenceExample ex;
    ex.prompt_id = pid;
    ex.prompt = "prompt " + pid;
    ex.chosen = a;
    ex.rejected = b;
    ex.chosen_evidence = ResponseEvidence::white_box(std::move(la));
    ex.rejected_evidence = ResponseEvidence::white_box(std::move(lb));
    return ex;
}

/// Random valid white-box pairs over `n_prompts` prompts with `vocab` responses each.
inline std::vector<PreferenceExample> random_pairs(std::mt19937_64& rng, std::size_t n, std::size_t n_prompts = 5,
                                                   std::size_t vocab = 4) {
    std::uniform_int_distribution<std::size_t> pp(0, n_prompts - 1), yy(0, vocab - 1), len(1, 6);
    std::uniform_real_distribution<double> lp(-3.0, 0.0);
    std::vector<PreferenceExample> out;
    while (out.size() < n) {
        const auto p = pp(rng);
        const auto a = yy(rng), b = yy(rng);
        if (a == b) continue;
        std::vector<double> la(len(rng)), lb(len(rng));
        for (auto& x : la) x = lp(rng);
        for (auto& x : lb) x = lp(rng);
        out.push_back(white_pair("p" + std::to_string(p), "answer " + std::to_string(a), "answer " + std::to_string(b),
                                 la, lb));
    }
    return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("cfa_test_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace cfa::testkit
