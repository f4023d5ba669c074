// cfa: command-line driver for calibration, weighting, training and the
// synthetic benchmark. Run `cfa <command> --help` for per-command flags.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cfa/pipeline.hpp"

namespace pl = cfa::pipeline;

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out, levels, style, input, calibrator, init, log, axis, grid, arms;
    std::optional<double> outside_weight, beta;
    std::optional<std::size_t> n_seeds;
    std::vector<std::string> inputs;
    bool emit_dataset = false;
};

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> g;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            g.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw cfa::config_error("--grid entry '" + item + "' is not numeric");
        }
    }
    return g;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) v.push_back(item);
    return v;
}

// Config file first, then flags on top.
pl::PipelineConfig resolve(const Flags& f) {
    pl::PipelineConfig c = f.config.empty() ? pl::PipelineConfig{} : pl::load_config(f.config);
    if (f.seed) c.seed = f.seed;
    if (f.out) c.out = *f.out;
    if (f.style) c.style = *f.style;
    if (f.input) c.input = *f.input;
    if (!f.inputs.empty()) c.inputs = f.inputs;
    if (f.calibrator) c.calibrator = *f.calibrator;
    if (f.init) c.init = *f.init;
    if (f.log) c.log = *f.log;
    if (f.axis) c.axis = *f.axis;
    if (f.grid) c.grid = parse_grid(*f.grid);
    if (f.arms) c.arms = split_list(*f.arms);
    if (f.n_seeds) c.n_seeds = *f.n_seeds;
    if (f.emit_dataset) c.emit_dataset = true;
    if (f.beta) c.train.beta = c.benchmark_train.beta = *f.beta;
    if (f.levels || f.outside_weight) {
        auto rungs = f.levels ? pl::parse_levels(*f.levels) : c.ladder.rungs();
        const double w_out = f.outside_weight ? *f.outside_weight : c.ladder.outside_weight();
        c.ladder = cfa::LevelLadder(std::move(rungs), w_out);
    }
    return c;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conformal feedback alignment: calibrate, weight, train and benchmark"};
    app.require_subcommand(1);
    Flags f;

    auto common = [&f](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", f.seed, "run-wide seed (overrides per-section seeds)");
        sub->add_option("--out", f.out, "output directory");
        sub->add_option("--levels", f.levels, "ladder rungs as p:w,p:w");
        sub->add_option("--outside-weight", f.outside_weight, "confidence of the Outside stratum");
        sub->add_option("--beta", f.beta, "DPO temperature");
        sub->add_option("--style", f.style, "dpo or ppo");
    };

    auto* calibrate = app.add_subcommand("calibrate", "fit conformal thresholds on the calibration split");
    auto* weight = app.add_subcommand("weight", "attach strata and pair weights to the train split");
    auto* train = app.add_subcommand("train", "train the tabular policy (dpo) or reward model + policy (ppo)");
    auto* simulate = app.add_subcommand("simulate", "run all benchmark arms on synthetic worlds");
    auto* sweep = app.add_subcommand("sweep", "run the benchmark across a grid on one axis");
    auto* evaluate = app.add_subcommand("evaluate", "score dataset responses from a recorded judge log");
    auto* report = app.add_subcommand("report", "render traces, reports and sweeps as tables");
    for (auto* s : {calibrate, weight, train, simulate, sweep, evaluate, report}) common(s);

    for (auto* s : {calibrate, weight, train, evaluate})
        s->add_option("--input", f.input, "input dataset (JSONL)");
    weight->add_option("--calibrator", f.calibrator, "calibrator artifact from `calibrate`");
    train->add_option("--init", f.init, "initial checkpoint (defaults to zero logits)");
    evaluate->add_option("--log", f.log, "recorded judge log (JSONL)");
    report->add_option("--input", f.inputs, "artifact(s) to render")->expected(1, -1);
    for (auto* s : {simulate, sweep}) {
        s->add_option("--arms", f.arms, "comma-separated arm names");
        s->add_option("--n-seeds", f.n_seeds, "number of replicate worlds");
    }
    simulate->add_flag("--emit-dataset", f.emit_dataset, "also write the first world's pairs as world.jsonl");
    sweep->add_option("--axis", f.axis, "data_fraction | coverage_level | evidence_kind | model_size_proxy");
    sweep->add_option("--grid", f.grid, "comma-separated grid values");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return pl::kUsage;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    pl::PipelineConfig config;
    if (const int rc = pl::guarded([&] { config = resolve(f); return 0; }, std::cerr); rc != 0) return rc;
    return pl::run_command(name, config, std::cout, std::cerr);
}
