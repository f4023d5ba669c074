#pragma once

// File-level pipeline behind the command-line tool: config resolution,
// artifacts with embedded provenance, and one function per subcommand.
//
// Every command computes all outputs in memory first and then commits them
// together (temp files, then renames), so a failing command leaves nothing
// behind. Artifacts never embed absolute paths or clocks; input files are
// recorded by name and content hash, so identical inputs give identical
// bytes.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfa/conformal.hpp"
#include "cfa/dataset.hpp"
#include "cfa/error.hpp"
#include "cfa/judge.hpp"
#include "cfa/models.hpp"
#include "cfa/nonconformity.hpp"
#include "cfa/synthetic.hpp"
#include "cfa/trainer.hpp"
#include "cfa/weighting.hpp"

namespace cfa::pipeline {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3 };

// ---------------------------------------------------------------------------
// Config

struct PipelineConfig {
    EvidenceKind evidence_kind = EvidenceKind::WhiteBox;
    bool length_normalize = false;
    BlackBoxConfig black_box;
    LevelLadder ladder;
    SplitSpec split;
    TrainConfig train;
    WorldConfig world;

    // simulate / sweep
    TrainConfig benchmark_train = BenchmarkConfig::default_train();
    double data_fraction = 1.0;
    double uniform_weight = 0.65;
    std::size_t n_seeds = 20;
    std::vector<std::string> arms;  // empty = all five
    std::string axis = "data_fraction";
    std::vector<double> grid;       // empty = the axis default
    bool emit_dataset = false;

    std::string style = "dpo";
    std::optional<std::uint64_t> seed;

    // paths; echoed as inputs (name + hash), never in the config block
    std::string input;
    std::vector<std::string> inputs;  // report
    std::string calibrator;
    std::string init;
    std::string log;
    std::string out = ".";

    ScorerConfig scorer() const {
        ScorerConfig s;
        s.kind = evidence_kind;
        s.length_normalize = length_normalize;
        s.black_box = black_box;
        return s;
    }

    std::vector<Arm> arm_list() const {
        if (arms.empty()) return all_arms();
        std::vector<Arm> out_arms;
        for (const auto& a : arms) out_arms.push_back(parse_arm(a));
        return out_arms;
    }

    BenchmarkConfig benchmark() const {
        BenchmarkConfig b;
        b.train = benchmark_train;
        b.ladder = ladder;
        b.split = split;
        b.scorer = scorer();
        b.data_fraction = data_fraction;
        b.uniform_weight = uniform_weight;
        return b;
    }

    /// A run-wide seed overrides every per-section seed.
    void resolve() {
        if (seed) split.seed = train.seed = world.seed = benchmark_train.seed = *seed;
        world.evidence_kind = evidence_kind;
        if (style != "dpo" && style != "ppo") throw config_error("style must be 'dpo' or 'ppo', got '" + style + "'");
        if (n_seeds == 0) throw config_error("n_seeds must be positive");
        train.validate();
        benchmark_train.validate();
        black_box.validate();
        world.validate();
        arm_list();
        parse_sweep_axis(axis);
    }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw config_error(where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        if (!ok) throw config_error("unknown key '" + k + "' in " + where);
    }
}

template <class T>
void read(const json& j, const char* key, T& into, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        into = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw config_error(where + "." + key + " has the wrong type");
    }
}

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adamw") return OptimizerKind::AdamW;
    throw config_error("unknown optimizer '" + s + "'");
}

inline BatchReduction parse_reduction(const std::string& s) {
    if (s == "mean") return BatchReduction::Mean;
    if (s == "weighted_mean") return BatchReduction::WeightedMean;
    throw config_error("unknown reduction '" + s + "'");
}

inline TrainConfig train_from_json(const json& j, TrainConfig t, const std::string& where) {
    check_keys(j, {"learning_rate", "steps", "batch_size", "beta", "seed", "optimizer", "adamw", "ppo", "reduction"}, where);
    read(j, "learning_rate", t.learning_rate, where);
    read(j, "steps", t.steps, where);
    read(j, "batch_size", t.batch_size, where);
    read(j, "beta", t.beta, where);
    read(j, "seed", t.seed, where);
    std::string s;
    if (j.contains("optimizer")) {
        read(j, "optimizer", s, where);
        t.optimizer = parse_optimizer(s);
    }
    if (j.contains("reduction")) {
        read(j, "reduction", s, where);
        t.reduction = parse_reduction(s);
    }
    if (j.contains("adamw")) {
        const auto& a = j["adamw"];
        check_keys(a, {"beta1", "beta2", "eps", "weight_decay"}, where + ".adamw");
        read(a, "beta1", t.adamw.beta1, where);
        read(a, "beta2", t.adamw.beta2, where);
        read(a, "eps", t.adamw.eps, where);
        read(a, "weight_decay", t.adamw.weight_decay, where);
    }
    if (j.contains("ppo")) {
        const auto& p = j["ppo"];
        check_keys(p, {"clip", "kl_coeff", "rollout_size", "updates_per_rollout"}, where + ".ppo");
        read(p, "clip", t.ppo.clip, where);
        read(p, "kl_coeff", t.ppo.kl_coeff, where);
        read(p, "rollout_size", t.ppo.rollout_size, where);
        read(p, "updates_per_rollout", t.ppo.updates_per_rollout, where);
    }
    return t;
}

} // namespace detail

/// Parses "p:w,p:w" rung lists.
inline std::vector<Rung> parse_levels(const std::string& text) {
    std::vector<Rung> rungs;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw config_error("--levels entries must look like p:w, got '" + item + "'");
        try {
            std::size_t used = 0;
            const double p = std::stod(item.substr(0, colon), &used);
            if (used != colon) throw std::invalid_argument("p");
            const std::string ws = item.substr(colon + 1);
            const double w = std::stod(ws, &used);
            if (used != ws.size()) throw std::invalid_argument("w");
            rungs.push_back({p, w});
        } catch (const std::logic_error&) {
            throw config_error("--levels entry '" + item + "' is not numeric");
        }
    }
    if (rungs.empty()) throw config_error("--levels is empty");
    return rungs;
}

inline PipelineConfig config_from_json(const json& j) {
    detail::check_keys(j,
                       {"evidence_kind", "length_normalize", "black_box", "ladder", "split", "train", "world", "benchmark",
                        "sweep", "style", "seed", "input", "inputs", "calibrator", "init", "log", "out"},
                       "config");
    PipelineConfig c;
    std::string s;
    if (j.contains("evidence_kind")) {
        detail::read(j, "evidence_kind", s, "config");
        try {
            c.evidence_kind = parse_evidence_kind(s);
        } catch (const error& e) {
            throw config_error(e.what());
        }
    }
    detail::read(j, "length_normalize", c.length_normalize, "config");
    if (j.contains("black_box")) {
        const auto& b = j["black_box"];
        detail::check_keys(b, {"lambda1", "lambda2"}, "black_box");
        detail::read(b, "lambda1", c.black_box.lambda1, "black_box");
        detail::read(b, "lambda2", c.black_box.lambda2, "black_box");
    }
    if (j.contains("ladder")) {
        try {
            c.ladder = ladder_from_json(j["ladder"]);
        } catch (const config_error&) {
            throw;
        } catch (const std::exception& e) {
            throw config_error(std::string("ladder: ") + e.what());
        }
    }
    if (j.contains("split")) {
        detail::check_keys(j["split"], {"calibration_size", "seed"}, "split");
        detail::read(j["split"], "calibration_size", c.split.calibration_size, "split");
        detail::read(j["split"], "seed", c.split.seed, "split");
    }
    if (j.contains("train")) c.train = detail::train_from_json(j["train"], c.train, "train");
    if (j.contains("world")) {
        const auto& w = j["world"];
        detail::check_keys(w, {"n_prompts", "vocab_size", "rho", "flip_rates", "n_pairs", "seed", "bag_size", "bag_sharpness"},
                           "world");
        detail::read(w, "n_prompts", c.world.n_prompts, "world");
        detail::read(w, "vocab_size", c.world.vocab_size, "world");
        detail::read(w, "rho", c.world.rho, "world");
        detail::read(w, "n_pairs", c.world.n_pairs, "world");
        detail::read(w, "seed", c.world.seed, "world");
        detail::read(w, "bag_size", c.world.bag_size, "world");
        detail::read(w, "bag_sharpness", c.world.bag_sharpness, "world");
        if (w.contains("flip_rates")) {
            const auto& f = w["flip_rates"];
            detail::check_keys(f, {"core", "shell", "outside"}, "world.flip_rates");
            detail::read(f, "core", c.world.flip_rates.core, "world.flip_rates");
            detail::read(f, "shell", c.world.flip_rates.shell, "world.flip_rates");
            detail::read(f, "outside", c.world.flip_rates.outside, "world.flip_rates");
        }
    }
    if (j.contains("benchmark")) {
        const auto& b = j["benchmark"];
        detail::check_keys(b, {"train", "data_fraction", "uniform_weight", "n_seeds", "arms", "emit_dataset"}, "benchmark");
        if (b.contains("train")) c.benchmark_train = detail::train_from_json(b["train"], c.benchmark_train, "benchmark.train");
        detail::read(b, "data_fraction", c.data_fraction, "benchmark");
        detail::read(b, "uniform_weight", c.uniform_weight, "benchmark");
        detail::read(b, "n_seeds", c.n_seeds, "benchmark");
        detail::read(b, "arms", c.arms, "benchmark");
        detail::read(b, "emit_dataset", c.emit_dataset, "benchmark");
    }
    if (j.contains("sweep")) {
        detail::check_keys(j["sweep"], {"axis", "grid"}, "sweep");
        detail::read(j["sweep"], "axis", c.axis, "sweep");
        detail::read(j["sweep"], "grid", c.grid, "sweep");
    }
    detail::read(j, "style", c.style, "config");
    if (j.contains("seed")) {
        std::uint64_t seed = 0;
        detail::read(j, "seed", seed, "config");
        c.seed = seed;
    }
    detail::read(j, "input", c.input, "config");
    detail::read(j, "inputs", c.inputs, "config");
    detail::read(j, "calibrator", c.calibrator, "config");
    detail::read(j, "init", c.init, "config");
    detail::read(j, "log", c.log, "config");
    detail::read(j, "out", c.out, "config");
    return c;
}

inline PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw config_error("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

/// The resolved settings, without paths. Embedded in every artifact.
inline json to_json(const PipelineConfig& c) {
    json arms = json::array();
    for (Arm a : c.arm_list()) arms.push_back(to_string(a));
    return {{"evidence_kind", to_string(c.evidence_kind)},
            {"length_normalize", c.length_normalize},
            {"black_box", {{"lambda1", c.black_box.lambda1}, {"lambda2", c.black_box.lambda2}}},
            {"ladder", to_json(c.ladder)},
            {"split", {{"calibration_size", c.split.calibration_size}, {"seed", c.split.seed}}},
            {"train", to_json(c.train)},
            {"world", to_json(c.world)},
            {"benchmark",
             {{"train", to_json(c.benchmark_train)},
              {"data_fraction", c.data_fraction},
              {"uniform_weight", c.uniform_weight},
              {"n_seeds", c.n_seeds},
              {"arms", arms},
              {"emit_dataset", c.emit_dataset}}},
            {"sweep", {{"axis", c.axis}, {"grid", c.grid}}},
            {"style", c.style},
            {"seed", c.seed ? json(*c.seed) : json(nullptr)}};
}

// ---------------------------------------------------------------------------
// Artifacts

/// Name and FNV-1a content hash of an input file.
inline json file_record(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return {{"file", path.filename().string()}, {"fnv1a", request_hash(ss.str())}};
}

inline fs::path manifest_path(const fs::path& artifact) {
    auto p = artifact;
    p += ".manifest.json";
    return p;
}

inline json read_json_file(const fs::path& path, const std::string& what) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + what + " '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw parse_error(what + " '" + path.string() + "' is not valid JSON: " + e.what());
    }
}

/// The config block carried by an artifact: inline for .json artifacts,
/// from the sidecar manifest otherwise.
inline std::optional<json> artifact_config(const fs::path& path) {
    if (path.extension() == ".json") {
        const auto j = read_json_file(path, "artifact");
        if (j.is_object() && j.contains("config")) return j["config"];
        return std::nullopt;
    }
    const auto m = manifest_path(path);
    if (!fs::exists(m)) return std::nullopt;
    const auto j = read_json_file(m, "manifest");
    if (j.contains("config")) return j["config"];
    return std::nullopt;
}

/// Rejects artifacts produced under a different ladder.
inline void check_ladder(const json& config, const LevelLadder& expected, const std::string& what) {
    if (!config.contains("ladder")) return;
    if (config["ladder"] != to_json(expected))
        throw config_error(what + " was produced with ladder " + config["ladder"].dump() + ", this run uses " +
                           to_json(expected).dump());
}

/// Outputs staged in memory and committed together.
class OutputSet {
public:
    explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

    fs::path add(const std::string& name, std::string contents) {
        files_.emplace_back(name, std::move(contents));
        return dir_ / name;
    }

    void commit() {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw io_error("cannot create output directory '" + dir_.string() + "'");
        std::vector<fs::path> staged;
        try {
            for (const auto& [name, contents] : files_) {
                auto tmp = dir_ / (name + ".tmp");
                std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
                if (!out) throw io_error("cannot write '" + tmp.string() + "'");
                staged.push_back(tmp);
                out << contents;
                out.close();
                if (!out) throw io_error("write failed for '" + tmp.string() + "'");
            }
        } catch (...) {
            for (const auto& t : staged) fs::remove(t, ec);
            throw;
        }
        for (std::size_t i = 0; i < files_.size(); ++i) {
            fs::rename(staged[i], dir_ / files_[i].first, ec);
            if (ec) throw io_error("cannot move '" + staged[i].string() + "' into place");
        }
    }

private:
    fs::path dir_;
    std::vector<std::pair<std::string, std::string>> files_;
};

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Commands

struct Streams {
    std::ostream& out;
    std::ostream& err;
};

inline void announce(const PipelineConfig& c, const Streams& io) { io.err << "config: " << to_json(c).dump() << '\n'; }

inline int cmd_calibrate(const PipelineConfig& c, const Streams& io) {
    if (c.input.empty()) throw config_error("calibrate needs --input");
    const auto data = load_preferences(c.input);
    const auto split = split_calibration(data, c.split);
    const auto scores = score_pairs(split.calibration, c.scorer());
    const auto state = calibrate(scores, c.ladder);

    json artifact = {{"calibrator", to_json(state)},
                     {"n_scores", scores.size()},
                     {"config", to_json(c)},
                     {"inputs", {{"dataset", file_record(c.input)}}}};
    OutputSet outs(c.out);
    const auto path = outs.add("calibrator.json", dump(artifact));
    outs.commit();

    io.out << "calibration scores: " << scores.size() << '\n';
    for (std::size_t i = 0; i < state.thresholds().size(); ++i)
        io.out << "threshold p=" << state.ladder().rungs()[i].level << ": " << state.thresholds()[i] << '\n';
    io.out << "wrote " << path.string() << '\n';
    return kOk;
}

inline int cmd_weight(const PipelineConfig& c, const Streams& io) {
    if (c.input.empty()) throw config_error("weight needs --input");
    if (c.calibrator.empty()) throw config_error("weight needs --calibrator");
    if (!fs::exists(c.calibrator)) throw io_error("calibrator artifact '" + c.calibrator + "' not found");
    const auto art = read_json_file(c.calibrator, "calibrator artifact");
    CalibratorState state = [&] {
        try {
            return calibrator_from_json(art.at("calibrator"));
        } catch (const json::exception& e) {
            throw parse_error(std::string("calibrator artifact is malformed: ") + e.what());
        }
    }();
    check_ladder(art.value("config", json::object()), c.ladder, "calibrator artifact");
    if (!(state.ladder() == c.ladder)) throw config_error("calibrator ladder differs from the configured ladder");

    const auto data = load_preferences(c.input);
    const auto input_rec = file_record(c.input);
    // The calibrator's own dataset is split the same way so calibration
    // pairs never reach training; any other file is weighted whole.
    const bool same_dataset = art.contains("inputs") && art["inputs"].contains("dataset") &&
                              art["inputs"]["dataset"].value("fnv1a", "") == input_rec["fnv1a"];
    std::vector<PreferenceExample> train;
    if (same_dataset)
        train = split_calibration(data, c.split).train;
    else
        train = data;
    if (train.empty()) io.err << "warning: train split is empty, writing an empty weighted file\n";

    const auto weighted = weight_dataset(train, state, c.scorer());
    std::map<std::string, std::size_t> hist;
    for (std::size_t k = 0; k <= state.ladder().size(); ++k)
        hist[to_string(k < state.ladder().size() ? Stratum{k} : Stratum::outside())] = 0;
    double sum_u = 0.0;
    for (const auto& w : weighted) {
        ++hist[to_string(w.chosen_stratum)];
        ++hist[to_string(w.rejected_stratum)];
        sum_u += w.weight;
    }
    const double mean_u = weighted.empty() ? 0.0 : sum_u / static_cast<double>(weighted.size());

    json manifest = {{"config", to_json(c)},
                     {"inputs", {{"dataset", input_rec}, {"calibrator", file_record(c.calibrator)}}},
                     {"calibration_split_applied", same_dataset},
                     {"n_pairs", weighted.size()},
                     {"stratum_histogram", hist},
                     {"mean_u", mean_u}};
    OutputSet outs(c.out);
    const auto path = outs.add("weighted.jsonl", to_jsonl(std::span<const WeightedPreferenceExample>(weighted)));
    outs.add("weighted.jsonl.manifest.json", dump(manifest));
    outs.commit();

    io.out << "pairs: " << weighted.size() << '\n';
    for (const auto& [k, v] : hist) io.out << "stratum " << k << ": " << v << '\n';
    io.out << "mean u: " << mean_u << '\n';
    io.out << "wrote " << path.string() << '\n';
    return kOk;
}

namespace detail {

inline double mean_margin(const ToyPolicy& policy, const ToyPolicy& ref, std::span<const ResolvedPair> pairs) {
    double s = 0.0;
    for (const auto& p : pairs)
        s += (policy.log_prob(p.chosen) - ref.log_prob(p.chosen)) - (policy.log_prob(p.rejected) - ref.log_prob(p.rejected));
    return pairs.empty() ? 0.0 : s / static_cast<double>(pairs.size());
}

inline std::string trace_jsonl(const std::vector<json>& rows) {
    std::string s;
    for (const auto& r : rows) s += r.dump() + "\n";
    return s;
}

} // namespace detail

inline int cmd_train(const PipelineConfig& c, const Streams& io) {
    if (c.input.empty()) throw config_error("train needs --input");
    const auto data = load_weighted(c.input);
    if (auto cfg = artifact_config(c.input)) check_ladder(*cfg, c.ladder, "weighted dataset");
    if (data.empty()) throw input_error("weighted dataset '" + c.input + "' is empty");

    json inputs = {{"weighted", file_record(c.input)}};
    ResponseTable table;
    if (!c.init.empty()) {
        const auto ck = read_json_file(c.init, "initial checkpoint");
        if (ck.contains("config")) check_ladder(ck["config"], c.ladder, "initial checkpoint");
        try {
            table = table_from_json(ck.at("policy"));
        } catch (const json::exception& e) {
            throw parse_error(std::string("initial checkpoint is malformed: ") + e.what());
        }
        inputs["init"] = file_record(c.init);
    } else {
        table = table_from_examples(std::span<const WeightedPreferenceExample>(data));
    }
    // Vocabulary mismatches surface here, before any update.
    const auto pairs = resolve_pairs(table, data);
    const ToyPolicy initial(table);

    json checkpoint = {{"style", c.style}, {"config", to_json(c)}, {"inputs", inputs}};
    json summary = {{"style", c.style}, {"n_pairs", data.size()}};
    std::vector<json> trace, rm_trace;

    if (c.style == "dpo") {
        const auto res = train_dpo(initial, data, c.train);
        for (std::size_t i = 0; i < res.trace.size(); ++i) trace.push_back({{"step", i}, {"loss", res.trace[i]}});
        checkpoint["policy"] = to_json(res.model.table());
        checkpoint["optimizer_state"] = res.optimizer_state;
        summary["initial_loss"] = dpo_objective(initial, initial, pairs, c.train.beta);
        summary["final_loss"] = dpo_objective(res.model, initial, pairs, c.train.beta);
        summary["final_margin"] = detail::mean_margin(res.model, initial, pairs);
    } else {
        const ToyRewardModel rm0(table);
        const auto rm = train_reward_model(rm0, data, c.train);
        for (std::size_t i = 0; i < rm.trace.size(); ++i) rm_trace.push_back({{"step", i}, {"loss", rm.trace[i]}});
        std::vector<std::string> prompts;
        for (std::size_t p = 0; p < table.prompt_count(); ++p) prompts.push_back(table.prompt_id(p));
        const auto res = train_ppo(initial, rm.model, prompts, c.train);
        for (std::size_t i = 0; i < res.reward_trace.size(); ++i)
            trace.push_back({{"step", i}, {"mean_reward", res.reward_trace[i]}, {"kl", res.kl_trace[i]}});
        checkpoint["policy"] = to_json(res.model.table());
        checkpoint["reward_model"] = to_json(rm.model.table());
        checkpoint["optimizer_state"] = res.optimizer_state;
        summary["initial_mean_reward"] = res.reward_trace.front();
        summary["final_mean_reward"] = res.reward_trace.back();
        summary["final_kl"] = res.kl_trace.back();
    }
    summary["config"] = to_json(c);

    json trace_manifest = {{"config", to_json(c)}, {"inputs", inputs}, {"rows", trace.size()}};
    OutputSet outs(c.out);
    const auto ck_path = outs.add("checkpoint.json", dump(checkpoint));
    outs.add("trace.jsonl", detail::trace_jsonl(trace));
    outs.add("trace.jsonl.manifest.json", dump(trace_manifest));
    if (!rm_trace.empty()) {
        outs.add("rm_trace.jsonl", detail::trace_jsonl(rm_trace));
        outs.add("rm_trace.jsonl.manifest.json", dump(trace_manifest));
    }
    outs.add("summary.json", dump(summary));
    outs.commit();

    for (const auto& [k, v] : summary.items())
        if (k != "config") io.out << k << ": " << v.dump() << '\n';
    io.out << "wrote " << ck_path.string() << '\n';
    return kOk;
}

namespace detail {

struct Check {
    std::string name;
    bool pass;
};

inline std::vector<Check> directional_checks(const BenchmarkReport& r) {
    std::vector<Check> checks;
    if (r.has(Arm::Cfa) && r.has(Arm::Base)) {
        const double gap = r.at(Arm::Cfa).mean.win_rate - r.at(Arm::Base).mean.win_rate;
        checks.push_back({"cfa win rate exceeds base by >= 0.02", gap >= 0.02});
        checks.push_back({"cfa win rate >= base - 0.01", gap >= -0.01});
    }
    if (r.has(Arm::Cfa) && r.has(Arm::RandomWeight))
        checks.push_back({"cfa win rate >= random_weight", r.at(Arm::Cfa).mean.win_rate >= r.at(Arm::RandomWeight).mean.win_rate});
    return checks;
}

inline std::string render_checks(const std::vector<Check>& checks) {
    std::string s;
    for (const auto& c : checks) s += std::string(c.pass ? "PASS" : "FAIL") + "  " + c.name + "\n";
    return s;
}

inline std::string render_sweep(const std::string& axis, const json& points) {
    std::ostringstream os;
    std::vector<std::string> arms;
    for (const auto& a : points.at(0).at("report").at("arms")) arms.push_back(a.at("arm").get<std::string>());
    os << std::left << std::setw(16) << axis;
    for (const auto& a : arms) os << std::right << std::setw(16) << a;
    const bool gap = std::find(arms.begin(), arms.end(), "cfa") != arms.end() &&
                     std::find(arms.begin(), arms.end(), "base") != arms.end();
    if (gap) os << std::setw(12) << "cfa-base" << "  check";
    os << '\n' << std::fixed << std::setprecision(4);
    for (const auto& pt : points) {
        os << std::left << std::setw(16) << pt.at("grid_value").get<double>();
        std::map<std::string, double> wr;
        for (const auto& a : pt.at("report").at("arms")) {
            wr[a.at("arm").get<std::string>()] = a.at("win_rate").get<double>();
            os << std::right << std::setw(16) << a.at("win_rate").get<double>();
        }
        if (gap) {
            const double g = wr["cfa"] - wr["base"];
            os << std::setw(12) << g << "  " << (g >= -0.01 ? "PASS" : "FAIL");
        }
        os << '\n';
    }
    return os.str();
}

inline json report_from_points(const std::string& axis, const std::vector<SweepPoint>& points) {
    json arr = json::array();
    for (const auto& p : points) arr.push_back({{"grid_value", p.grid_value}, {"report", to_json(p.report)}});
    return {{"axis", axis}, {"points", arr}};
}

} // namespace detail

inline int cmd_simulate(const PipelineConfig& c, const Streams& io) {
    const auto arms = c.arm_list();
    const auto report = run_replicated(c.world, arms, c.benchmark(), c.n_seeds);
    json j = to_json(report);
    j["config"] = to_json(c);
    const std::string table = format_report_table(report) + "\n" + detail::render_checks(detail::directional_checks(report));

    OutputSet outs(c.out);
    outs.add("report.json", dump(j));
    outs.add("report.txt", table);
    if (c.emit_dataset) {
        const auto world = generate_world(c.world);
        outs.add("world.jsonl", to_jsonl(std::span<const PreferenceExample>(world.examples)));
    }
    outs.commit();
    io.out << table;
    return kOk;
}

inline int cmd_sweep(const PipelineConfig& c, const Streams& io) {
    const auto axis = parse_sweep_axis(c.axis);
    const auto grid = c.grid.empty() ? default_grid(axis) : c.grid;
    const auto points = sweep(axis, grid, c.world, c.benchmark(), c.arm_list(), c.n_seeds);
    json j = detail::report_from_points(c.axis, points);
    j["config"] = to_json(c);
    const std::string table = detail::render_sweep(c.axis, j["points"]);

    OutputSet outs(c.out);
    outs.add("sweep.json", dump(j));
    outs.add("sweep.csv", sweep_triples_csv(points));
    outs.add("sweep.txt", table);
    outs.commit();
    io.out << table;
    return kOk;
}

inline int cmd_evaluate(const PipelineConfig& c, const Streams& io) {
    if (c.input.empty()) throw config_error("evaluate needs --input");
    if (c.log.empty()) throw config_error("evaluate needs --log");
    const auto data = load_preferences(c.input);
    RecordedLogTransport transport(c.log);

    std::string rows;
    std::set<std::pair<std::string, std::string>> seen;
    double sum = 0.0;
    std::size_t n = 0, mismatches = 0;
    std::map<int, std::size_t> scales;
    for (const auto& ex : data) {
        for (const auto* resp : {&ex.chosen, &ex.rejected}) {
            if (!seen.emplace(ex.prompt_id, *resp).second) continue;
            const auto prompt = format_judge_prompt(ex.prompt, *resp);
            const auto s = parse_judge_response(transport.request(prompt));
            json row = {{"prompt_id", ex.prompt_id}, {"response", *resp},   {"accuracy", s.accuracy},
                        {"relevance", s.relevance},  {"completeness", s.completeness}, {"expression", s.expression},
                        {"overall", s.overall},      {"scale", s.scale},     {"overall_mismatch", s.overall_mismatch}};
            rows += row.dump() + "\n";
            sum += s.overall * 10.0 / s.scale;
            ++n;
            ++scales[s.scale];
            mismatches += s.overall_mismatch ? 1 : 0;
        }
    }
    json summary = {{"responses", n},
                    {"mean_overall_out_of_10", n ? sum / static_cast<double>(n) : 0.0},
                    {"overall_mismatches", mismatches},
                    {"scale_counts", {{"10", scales[10]}, {"100", scales[100]}}},
                    {"config", to_json(c)},
                    {"inputs", {{"dataset", file_record(c.input)}, {"log", file_record(c.log)}}}};
    OutputSet outs(c.out);
    outs.add("evaluation.jsonl", rows);
    outs.add("evaluation_summary.json", dump(summary));
    outs.commit();
    io.out << "responses: " << n << "\nmean overall (/10): " << summary["mean_overall_out_of_10"].get<double>()
           << "\noverall mismatches: " << mismatches << '\n';
    return kOk;
}

namespace detail {

/// Aligned table of a JSONL trace: one row per record.
inline std::string render_trace(const fs::path& path) {
    const auto rows = read_jsonl<json>(path, [](const json& j) {
        if (!j.is_object()) throw schema_error("trace rows must be objects");
        return j;
    });
    std::ostringstream os;
    if (rows.empty()) return "(empty trace)\n";
    std::vector<std::string> cols;
    if (rows.front().contains("step")) cols.push_back("step");
    for (const auto& [k, v] : rows.front().items())
        if (k != "step") cols.push_back(k);
    for (const auto& k : cols) os << std::setw(14) << k;
    os << '\n';
    for (const auto& r : rows) {
        for (const auto& k : cols) {
            const auto& v = r.contains(k) ? r[k] : json(nullptr);
            if (v.is_number_float())
                os << std::setw(14) << std::setprecision(6) << std::fixed << v.get<double>();
            else
                os << std::setw(14) << v.dump();
        }
        os << '\n';
    }
    return os.str();
}

inline std::string render_artifact(const fs::path& path) {
    if (path.extension() == ".jsonl") return render_trace(path);
    const auto j = read_json_file(path, "report input");
    if (j.contains("points") && j.contains("axis"))
        return render_sweep(j["axis"].get<std::string>(), j["points"]);
    if (j.contains("arms")) {
        BenchmarkReport r;
        for (const auto& a : j["arms"]) {
            ArmMetrics m{a.at("win_rate").get<double>(), a.at("expected_quality").get<double>(),
                         a.at("preference_accuracy").get<double>(), a.value("mean_weight", 0.0)};
            r.arms.push_back({parse_arm(a.at("arm").get<std::string>()), m, {m}});
        }
        return format_report_table(r) + "\n" + render_checks(directional_checks(r));
    }
    if (j.contains("calibrator")) {
        std::ostringstream os;
        const auto st = calibrator_from_json(j["calibrator"]);
        os << std::setw(8) << "level" << std::setw(12) << "confidence" << std::setw(16) << "threshold" << '\n';
        for (std::size_t i = 0; i < st.ladder().size(); ++i)
            os << std::setw(8) << st.ladder().rungs()[i].level << std::setw(12) << st.ladder().rungs()[i].confidence
               << std::setw(16) << st.thresholds()[i] << '\n';
        return os.str();
    }
    // Flat summaries: key/value rows.
    std::ostringstream os;
    for (const auto& [k, v] : j.items())
        if (k != "config" && k != "inputs") os << std::left << std::setw(24) << k << v.dump() << '\n';
    return os.str();
}

} // namespace detail

inline int cmd_report(const PipelineConfig& c, const Streams& io) {
    std::vector<std::string> inputs = c.inputs;
    if (!c.input.empty()) inputs.insert(inputs.begin(), c.input);
    if (inputs.empty()) throw config_error("report needs at least one --input");

    std::optional<json> first_ladder;
    std::string text;
    json record = {{"config", to_json(c)}, {"inputs", json::array()}};
    for (const auto& in : inputs) {
        if (auto cfg = artifact_config(in); cfg && cfg->contains("ladder")) {
            if (!first_ladder) first_ladder = (*cfg)["ladder"];
            else if ((*cfg)["ladder"] != *first_ladder)
                throw config_error("'" + in + "' was produced with a different ladder than '" + inputs.front() + "'");
        }
        text += "== " + fs::path(in).filename().string() + "\n" + detail::render_artifact(in) + "\n";
        record["inputs"].push_back(file_record(in));
    }
    OutputSet outs(c.out);
    outs.add("report.txt", text);
    outs.add("report.txt.manifest.json", dump(record));
    outs.commit();
    io.out << text;
    return kOk;
}

/// Runs `fn` and maps library errors to exit codes.
template <class Fn>
int guarded(Fn&& fn, std::ostream& err) {
    try {
        return fn();
    } catch (const validation_error& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const parse_error& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const schema_error& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const input_error& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const error& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const json::exception& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    }
}

inline int run_command(const std::string& name, PipelineConfig c, std::ostream& out, std::ostream& err) {
    return guarded(
        [&] {
            c.resolve();
            const Streams io{out, err};
            announce(c, io);
            if (name == "calibrate") return cmd_calibrate(c, io);
            if (name == "weight") return cmd_weight(c, io);
            if (name == "train") return cmd_train(c, io);
            if (name == "simulate") return cmd_simulate(c, io);
            if (name == "sweep") return cmd_sweep(c, io);
            if (name == "evaluate") return cmd_evaluate(c, io);
            if (name == "report") return cmd_report(c, io);
            throw config_error("unknown command '" + name + "'");
        },
        err);
}

} // namespace cfa::pipeline
