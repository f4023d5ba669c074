// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cfa/conformal.hpp"
#include "cfa/judge.hpp"
#include "cfa/losses.hpp"
#include "cfa/nonconformity.hpp"
#include "cfa/pipeline.hpp"
#include "cfa/synthetic.hpp"
#include "cfa/trainer.hpp"
#include "cfa/weighting.hpp"

using namespace cfa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel(double a, double b, double floor = 0.0) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// -log sigmoid(z) evaluated in extended precision.
double neg_log_sigmoid_ref(double z) {
    const long double x = z;
    const long double v = x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
    return static_cast<double>(v);
}

// 1. Coverage
Outcome coverage() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> d(0.0, 1.0);
    const std::size_t n = 100, trials = 200, m = 1000;
    double sum[2] = {0, 0};
    std::vector<double> cal(n), test(m);
    for (std::size_t t = 0; t < trials; ++t) {
        for (auto& x : cal) x = d(rng);
        for (auto& x : test) x = d(rng);
        const auto st = calibrate(cal);  // rungs at 0.5 and 0.8
        for (std::size_t k = 0; k < 2; ++k) sum[k] += coverage_audit(st, test, k);
    }
    const double secs = seconds_since(t0);
    bool ok = secs < 10.0;
    std::string detail;
    const double levels[2] = {0.5, 0.8};
    for (std::size_t k = 0; k < 2; ++k) {
        const double mean = sum[k] / trials;
        ok = ok && mean >= levels[k] - 0.03 && mean <= levels[k] + 1.0 / (n + 1) + 0.03;
        detail += fmt("p=%.1f", levels[k]) + fmt(" mean=%.4f; ", mean);
    }
    return {ok, detail + fmt("%.2fs", secs)};
}

// 2. Quantile oracle
Outcome quantile_oracle() {
    std::vector<Rung> rungs;
    for (int k = 1; k <= 19; ++k) rungs.push_back({k / 20.0, 1.0 - k / 20.0});
    const LevelLadder ladder(rungs, 0.0);
    std::mt19937_64 rng(7);
    std::size_t checked = 0, bad = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 50)(rng);
        const int pool = std::uniform_int_distribution<int>(1, 12)(rng);
        std::uniform_int_distribution<int> pick(0, pool - 1);
        std::vector<double> s(n);
        for (auto& x : s) x = 0.25 * pick(rng) - 1.0;
        const auto st = calibrate(s, ladder);
        std::vector<double> sorted = s;
        std::sort(sorted.begin(), sorted.end());
        for (int k = 1; k <= 19; ++k) {
            const std::size_t rank = ((n + 1) * k + 19) / 20;  // ceil((n+1)k/20) in integers
            const double want = rank > n ? std::numeric_limits<double>::infinity() : sorted[rank - 1];
            ++checked;
            if (st.thresholds()[k - 1] != want) ++bad;
        }
    }
    return {bad == 0, std::to_string(checked) + " thresholds, " + std::to_string(bad) + " mismatches"};
}

// 3. Weight table
Outcome weight_table() {
    const LevelLadder ladder;
    const Stratum s[3] = {Stratum::core(), Stratum{1}, Stratum::outside()};
    const double want[3][3] = {{0.8, 0.65, 0.525}, {0.65, 0.5, 0.375}, {0.525, 0.375, 0.25}};
    bool ok = true;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) ok = ok && std::abs(pair_weight(s[a], s[b], ladder).u - want[a][b]) < 1e-15;
    // Two-set cases: same stratum keeps its weight, mixed strata average.
    const double qa = 0.8, qb = 0.5;
    ok = ok && pair_weight(s[0], s[0], ladder).u == qa && pair_weight(s[1], s[1], ladder).u == qb &&
         pair_weight(s[0], s[1], ladder).u == (qa + qb) / 2 && pair_weight(s[1], s[0], ladder).u == (qa + qb) / 2;
    return {ok, "9 combinations + 4 two-set cases"};
}

// 4. Losses
Outcome losses() {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> lp(-20.0, 0.0), bb(0.05, 2.0), uu(0.0, 1.0), rr(-15.0, 15.0);
    double worst_a = 0, worst_b = 0, worst_c = 0, worst_zero = 0;
    for (int i = 0; i < 1000; ++i) {
        const DpoInputs in{lp(rng), lp(rng), lp(rng), lp(rng), bb(rng), 1.0};
        const double d = (in.logp_theta_plus - in.logp_ref_plus) - (in.logp_theta_minus - in.logp_ref_minus);
        worst_a = std::max(worst_a, rel(dpo_loss(in).loss, neg_log_sigmoid_ref(in.beta * d)));
        const double rp = rr(rng), rn = rr(rng);
        worst_a = std::max(worst_a, rel(rm_loss({rp, rn, 1.0}).loss, neg_log_sigmoid_ref(rp - rn)));
    }
    const double h = 1e-5;
    for (int i = 0; i < 1000; ++i) {
        const double margin = rr(rng), beta = bb(rng) / 2, u = uu(rng);
        auto f = [&](double x) { return dpo_loss_from_delta(x, beta, u).loss; };
        worst_b = std::max(worst_b, rel(dpo_loss_from_delta(margin, beta, u).dloss_ddelta,
                                        (f(margin + h) - f(margin - h)) / (2 * h), 1e-9));
        const double rp = rr(rng) / 2, rn = rr(rng) / 2;
        const auto g = rm_loss({rp, rn, u});
        auto fp = [&](double x) { return rm_loss({x, rn, u}).loss; };
        auto fm = [&](double x) { return rm_loss({rp, x, u}).loss; };
        worst_b = std::max(worst_b, rel(g.dloss_dr_plus, (fp(rp + h) - fp(rp - h)) / (2 * h), 1e-9));
        worst_b = std::max(worst_b, rel(g.dloss_dr_minus, (fm(rn + h) - fm(rn - h)) / (2 * h), 1e-9));
    }
    std::normal_distribution<double> nd(0.0, 1.0);
    auto random_table = [&](std::size_t prompts, std::size_t vocab) {
        ResponseTable t;
        for (std::size_t p = 0; p < prompts; ++p) {
            std::vector<std::string> r;
            std::vector<double> v;
            for (std::size_t y = 0; y < vocab; ++y) {
                r.push_back("r" + std::to_string(y));
                v.push_back(nd(rng));
            }
            t.add_prompt("p" + std::to_string(p), r, v);
        }
        return t;
    };
    for (int inst = 0; inst < 100; ++inst) {
        const ToyPolicy ref(random_table(3, 5));
        ToyPolicy pol(random_table(3, 5));
        std::vector<WeightedPreferenceExample> data;
        std::uniform_int_distribution<int> pick(0, 4);
        for (int k = 0; k < 4; ++k) {
            int a = pick(rng), b = pick(rng);
            while (b == a) b = pick(rng);
            WeightedPreferenceExample w;
            w.example.prompt_id = "p" + std::to_string(k % 3);
            w.example.chosen = "r" + std::to_string(a);
            w.example.rejected = "r" + std::to_string(b);
            w.weight = uu(rng);
            data.push_back(w);
        }
        const auto pairs = resolve_pairs(pol.table(), data);
        const double beta = bb(rng);
        SparseGrad sg;
        dpo_parameter_gradient(pol, ref, pairs, beta, BatchReduction::Mean, sg);
        const auto g = dense_gradient(sg, pol.parameters().size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x0 = pol.parameters()[i];
            pol.parameters()[i] = x0 + h;
            const double up = dpo_objective(pol, ref, pairs, beta);
            pol.parameters()[i] = x0 - h;
            const double down = dpo_objective(pol, ref, pairs, beta);
            pol.parameters()[i] = x0;
            const double fd = (up - down) / (2 * h);
            if (g[i] == 0.0)
                worst_zero = std::max(worst_zero, std::abs(fd));  // logit cancels out of Δ
            else
                worst_c = std::max(worst_c, rel(g[i], fd, 1e-8));
        }
    }
    const bool ok = worst_a <= 1e-15 && worst_b <= 1e-6 && worst_c <= 1e-5 && worst_zero <= 1e-9;
    return {ok, fmt("(a) %.2e", worst_a) + fmt(" (b) %.2e", worst_b) + fmt(" (c) %.2e", worst_c) +
                    fmt(", exact zeros within %.1e", worst_zero)};
}

// 5. u-scaling
Outcome u_scaling() {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> m(-30.0, 30.0), uu(0.0, 1.0);
    std::size_t bad = 0;
    for (int i = 0; i < 2000; ++i) {
        const double margin = m(rng), u = uu(rng);
        const auto one = dpo_loss_from_delta(margin, 0.7, 1.0), w = dpo_loss_from_delta(margin, 0.7, u);
        if (w.loss != u * one.loss || w.dloss_ddelta != u * one.dloss_ddelta) ++bad;
        const auto r1 = rm_loss({margin, 0.0, 1.0}), ru = rm_loss({margin, 0.0, u});
        if (ru.loss != u * r1.loss || ru.dloss_dr_plus != u * r1.dloss_dr_plus || ru.dloss_dr_minus != u * r1.dloss_dr_minus)
            ++bad;
    }

    // u = 0 through the training command: the checkpoint policy must equal the initial table.
    WorldConfig wc;
    wc.n_prompts = 15;
    wc.n_pairs = 150;
    const auto world = generate_world(wc);
    std::vector<WeightedPreferenceExample> data;
    for (const auto& ex : world.examples) {
        WeightedPreferenceExample w;
        w.example = ex;
        w.weight = 0.0;
        w.chosen_stratum = w.rejected_stratum = Stratum::outside();
        data.push_back(w);
    }
    const auto dir = fs::temp_directory_path() / "cfa_acceptance_u0";
    fs::remove_all(dir);
    fs::create_directories(dir);
    save_weighted(std::span<const WeightedPreferenceExample>(data), dir / "w.jsonl");
    const auto initial = to_json(table_from_examples(std::span<const WeightedPreferenceExample>(data))).dump();
    bool noop = true;
    for (auto opt : {OptimizerKind::Sgd, OptimizerKind::AdamW}) {
        pipeline::PipelineConfig c;
        c.input = (dir / "w.jsonl").string();
        c.out = dir.string();
        c.train.optimizer = opt;
        c.train.steps = 500;
        std::ostringstream out, err;
        if (pipeline::run_command("train", c, out, err) != 0) return {false, "train failed: " + err.str()};
        std::ifstream in(dir / "checkpoint.json");
        const auto ck = nlohmann::json::parse(in);
        noop = noop && ck.at("policy").dump() == initial;
    }
    return {bad == 0 && noop, std::to_string(bad) + " non-linear cases; u=0 checkpoint " + (noop ? "unchanged" : "CHANGED")};
}

// 6. Black-box scores
Outcome black_box() {
    bool ok = frequency(SampleBag({"a", "a", "b"}), "a") == 2 && frequency(SampleBag({"a", "a", "b"}), "c") == 0 &&
              frequency(SampleBag({"a"}), "a") == 1;
    ok = ok && normalized_entropy(SampleBag({"a", "a", "a"})) == 0.0 &&
         std::abs(normalized_entropy(SampleBag({"a", "b"})) - 1.0) < 1e-15 &&
         std::abs(normalized_entropy(SampleBag({"a", "a", "b", "b"})) - 0.5) < 1e-15;
    ok = ok && similarity("x y", "x y") == 1.0 && similarity("a b", "c d") == 0.0 &&
         std::abs(similarity("a b", "b c") - 1.0 / 3.0) < 1e-15;
    ok = ok && std::abs(score_blackbox(SampleBag({"y1", "y1", "y1"}), "y1") + 4.0) < 1e-15 &&
         std::abs(score_blackbox(SampleBag({"y1", "y2"}), "y1") + 1.0) < 1e-15;
    BlackBoxConfig off;
    off.lambda1 = off.lambda2 = 0.0;
    ok = ok && score_blackbox(SampleBag({"y1", "y1", "y2"}), "y3", off) == 0.0;
    const bool examples = ok;

    std::mt19937_64 rng(17);
    const std::vector<std::string> words = {"the", "cat", "sat", "on", "a", "mat", "dog", "ran"};
    std::size_t violations = 0, compared = 0;
    for (int b = 0; b < 1000; ++b) {
        const std::size_t size = std::uniform_int_distribution<std::size_t>(1, 30)(rng);
        const int distinct = std::uniform_int_distribution<int>(1, 8)(rng);
        std::vector<std::string> pool;
        for (int k = 0; k < distinct; ++k) {
            std::string s;
            const int len = std::uniform_int_distribution<int>(1, 4)(rng);
            for (int t = 0; t < len; ++t)
                s += (t ? " " : "") + words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng)];
            pool.push_back(s);
        }
        std::vector<std::string> samples;
        for (std::size_t i = 0; i < size; ++i)
            samples.push_back(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]);
        BlackBoxConfig cfg;
        cfg.lambda1 = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
        cfg.lambda2 = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
        const SampleBag bag(samples);
        const double top = score_blackbox(bag, bag.top(), cfg);
        for (const auto& [y, n] : bag.counts()) {
            ++compared;
            if (top > score_blackbox(bag, y, cfg)) ++violations;
        }
    }
    return {examples && violations == 0, std::string("examples ") + (examples ? "ok" : "FAILED") + "; " +
                                             std::to_string(violations) + " violations in " + std::to_string(compared)};
}

double gap(const BenchmarkReport& r) { return r.at(Arm::Cfa).mean.win_rate - r.at(Arm::Base).mean.win_rate; }

// 7. Directional benchmark
Outcome benchmark() {
    const auto t0 = std::chrono::steady_clock::now();
    const BenchmarkConfig bc;
    const std::size_t seeds = 20;
    const auto noisy = run_replicated(WorldConfig{}, all_arms(), bc, seeds);
    WorldConfig clean;
    clean.flip_rates = {0.0, 0.0, 0.0};
    const auto quiet = run_replicated(clean, {Arm::Base, Arm::Cfa}, bc, seeds);
    const double secs = seconds_since(t0);
    const double g = gap(noisy), g0 = gap(quiet);
    const double cfa = noisy.at(Arm::Cfa).mean.win_rate, rnd = noisy.at(Arm::RandomWeight).mean.win_rate;
    const bool ok = g >= 0.02 && cfa >= rnd && std::abs(g0) < 0.02 && secs < 300.0;
    return {ok, fmt("noisy: base %.4f", noisy.at(Arm::Base).mean.win_rate) + fmt(" cfa %.4f", cfa) +
                    fmt(" random %.4f", rnd) + fmt(" gap %+.4f", g) + fmt("; zero-noise gap %+.4f", g0) +
                    fmt("; %.1fs", secs)};
}

// 8. Data-fraction sweep
Outcome data_fraction_sweep() {
    const auto pts = sweep(SweepAxis::DataFraction, {0.05, 0.10, 0.20, 0.35, 0.50}, WorldConfig{}, BenchmarkConfig{},
                           {Arm::Base, Arm::Cfa}, 10);
    bool ok = true;
    std::string detail;
    for (const auto& p : pts) {
        const double g = gap(p.report);
        ok = ok && g >= -0.01;
        detail += fmt("%.2f:", p.grid_value) + fmt("%+.4f ", g);
    }
    return {ok, detail};
}

// 9. Coverage sweep
Outcome coverage_sweep() {
    const auto pts = sweep(SweepAxis::CoverageLevel, {0.6, 0.7, 0.8, 0.9}, WorldConfig{}, BenchmarkConfig{},
                           {Arm::Base, Arm::Cfa}, 20);
    bool ok = true;
    std::string detail;
    double smallest = std::numeric_limits<double>::infinity();
    double smallest_at = 0;
    for (const auto& p : pts) {
        const double g = gap(p.report);
        ok = ok && g >= -0.01;
        if (g < smallest) {
            smallest = g;
            smallest_at = p.grid_value;
        }
        detail += fmt("p2=%.1f:", p.grid_value) + fmt("%+.4f ", g);
    }
    ok = ok && smallest_at == 0.6;
    return {ok, detail + fmt("smallest at %.1f", smallest_at)};
}

// 10. Judge round-trip
Outcome judge() {
    const std::string prompt = format_judge_prompt("Summarise the text.", "A short summary.");
    const char* verbatim[] = {
        "You are an expert evaluator. You are given an original input and an AI-generated response. Your task is to evaluate\n"
        "the response based on four criteria: Accuracy, Relevance, Completeness, and\n"
        "Expression. Each criterion should be scored from 0 to 100 in increments of 5.\n"
        "Provide a brief justification for each score. Then, calculate the average of the\n"
        "four scores and present it as the Overall Score.",
        "1. Accuracy (Acc): Does the response accurately reflect the content and intent of the original prompt?",
        "2. Relevance (Rel): Is the response closely aligned with the topic and requirements of the prompt?",
        "3. Completeness (Comp): Does the response address all essential aspects or key points in the prompt?",
        "4. Expression (Expr): Is the response clear, well-written, and easy to understand?",
        "Please only return the four line‐scores and the Overall Score, in this exact format:",
        "**Accuracy (Acc):** [score]/10\n**Relevance (Rel):** [score]/10\n**Completeness (Comp):** [score]/10\n"
        "**Expression (Expr):** [score]/10\n**Overall Score:** [average]/10"};
    bool templ = true;
    for (const char* v : verbatim) templ = templ && prompt.find(v) != std::string::npos;

    std::mt19937_64 rng(19);
    std::size_t bad = 0;
    for (int scale : {10, 100}) {
        const double unit = scale == 10 ? 0.5 : 5.0;  // 21 levels either way
        std::uniform_int_distribution<int> step(0, 20);
        for (int i = 0; i < 100; ++i) {
            double v[4];
            for (auto& x : v) x = step(rng) * unit;
            MockTransport mock([&](const std::string&) { return fill_format_block(v[0], v[1], v[2], v[3], scale); });
            const auto s =
                parse_judge_response(mock.request(format_judge_prompt("input " + std::to_string(i), "response")));
            if (s.accuracy != v[0] || s.relevance != v[1] || s.completeness != v[2] || s.expression != v[3] ||
                s.scale != scale || s.overall_mismatch)
                ++bad;
        }
    }
    return {templ && bad == 0, std::string("template ") + (templ ? "verbatim" : "MISSING") + "; " +
                                   std::to_string(bad) + " of 200 vectors wrong"};
}

// 11. Pipeline determinism
Outcome determinism() {
    const auto root = fs::temp_directory_path() / "cfa_acceptance_det";
    fs::remove_all(root);
    fs::create_directories(root);
    WorldConfig wc;
    wc.n_prompts = 40;
    wc.n_pairs = 600;
    const auto world = generate_world(wc);
    save_preferences(std::span<const PreferenceExample>(world.examples), root / "data.jsonl");

    std::map<std::string, std::string> first;
    std::size_t files = 0, differing = 0;
    for (int rep = 0; rep < 2; ++rep) {
        const auto out = root / ("run" + std::to_string(rep));
        pipeline::PipelineConfig c;
        c.seed = 1234;
        c.out = out.string();
        c.train.steps = 300;
        std::ostringstream sink;
        auto step = [&](const std::string& cmd) { return pipeline::run_command(cmd, c, sink, sink) == 0; };
        c.input = (root / "data.jsonl").string();
        if (!step("calibrate")) return {false, "calibrate failed: " + sink.str()};
        c.calibrator = (out / "calibrator.json").string();
        if (!step("weight")) return {false, "weight failed: " + sink.str()};
        c.input = (out / "weighted.jsonl").string();
        if (!step("train")) return {false, "train failed: " + sink.str()};
        c.input.clear();
        c.inputs = {(out / "trace.jsonl").string(), (out / "summary.json").string(), (out / "calibrator.json").string()};
        if (!step("report")) return {false, "report failed: " + sink.str()};
        for (const auto& e : fs::directory_iterator(out)) {
            std::ifstream in(e.path(), std::ios::binary);
            std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
            const auto name = e.path().filename().string();
            if (rep == 0) {
                first[name] = std::move(bytes);
            } else {
                ++files;
                if (!first.contains(name) || first[name] != bytes) ++differing;
            }
        }
    }
    const bool ok = files == first.size() && files > 0 && differing == 0;
    return {ok, std::to_string(files) + " artifacts compared, " + std::to_string(differing) + " differ"};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"conformal coverage", coverage},
        {"quantile oracle equivalence", quantile_oracle},
        {"weight-table fidelity", weight_table},
        {"loss correctness", losses},
        {"u-scaling", u_scaling},
        {"black-box score vectors", black_box},
        {"directional benchmark", benchmark},
        {"data-fraction sweep", data_fraction_sweep},
        {"coverage sweep", coverage_sweep},
        {"judge round-trip", judge},
        {"pipeline determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
