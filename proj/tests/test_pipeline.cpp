#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cfa/pipeline.hpp"
#include "support.hpp"

using namespace cfa;
using namespace cfa::pipeline;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(const std::string& cmd, PipelineConfig c) {
    std::ostringstream out, err;
    const int code = run_command(cmd, std::move(c), out, err);
    return {code, out.str(), err.str()};
}

fs::path write_world(const fs::path& dir, std::size_t n_pairs, std::size_t n_prompts = 200, std::uint64_t seed = 0) {
    WorldConfig wc;
    wc.n_pairs = n_pairs;
    wc.n_prompts = n_prompts;
    wc.seed = seed;
    const auto w = generate_world(wc);
    fs::create_directories(dir);
    const auto path = dir / "data.jsonl";
    save_preferences(std::span<const PreferenceExample>(w.examples), path);
    return path;
}

fs::path write_flat(const fs::path& dir, const std::string& name, std::size_t n, double logprob) {
    std::vector<PreferenceExample> v;
    for (std::size_t i = 0; i < n; ++i)
        v.push_back(testkit::white_pair("p" + std::to_string(i % 7), "a" + std::to_string(i), "b" + std::to_string(i),
                                        {logprob, logprob}, {logprob}));
    fs::create_directories(dir);
    save_preferences(std::span<const PreferenceExample>(v), dir / name);
    return dir / name;
}

PipelineConfig base_config(const fs::path& out) {
    PipelineConfig c;
    c.out = out.string();
    c.train.steps = 100;
    return c;
}

std::vector<std::string> lines_of(const std::string& s) {
    std::vector<std::string> v;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) v.push_back(l);
    return v;
}

} // namespace

TEST(Config, ParsesSectionsAndRejectsUnknownKeys) {
    const auto c = config_from_json(nlohmann::json::parse(R"({
        "evidence_kind": "blackbox",
        "ladder": {"rungs": [{"level": 0.5, "confidence": 0.9}, {"level": 0.9, "confidence": 0.4}], "outside_weight": 0.1},
        "split": {"calibration_size": 50, "seed": 3},
        "train": {"learning_rate": 0.2, "steps": 7, "optimizer": "sgd"},
        "benchmark": {"n_seeds": 2, "arms": ["base", "cfa"]},
        "sweep": {"axis": "coverage_level", "grid": [0.7]},
        "style": "ppo",
        "seed": 42
    })"));
    EXPECT_EQ(c.evidence_kind, EvidenceKind::BlackBox);
    EXPECT_EQ(c.ladder.size(), 2u);
    EXPECT_EQ(c.ladder.outside_weight(), 0.1);
    EXPECT_EQ(c.split.calibration_size, 50u);
    EXPECT_EQ(c.train.steps, 7u);
    EXPECT_EQ(c.train.optimizer, OptimizerKind::Sgd);
    EXPECT_EQ(c.n_seeds, 2u);
    EXPECT_EQ(c.axis, "coverage_level");
    EXPECT_EQ(c.style, "ppo");

    auto r = c;
    r.resolve();
    EXPECT_EQ(r.split.seed, 42u);
    EXPECT_EQ(r.train.seed, 42u);
    EXPECT_EQ(r.world.seed, 42u);
    EXPECT_EQ(r.benchmark_train.seed, 42u);
    EXPECT_EQ(r.world.evidence_kind, EvidenceKind::BlackBox);

    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"bogus": 1})")), config_error);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"train": {"lr": 1}})")), config_error);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"evidence_kind": "greybox"})")), config_error);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"split": {"calibration_size": "ten"}})")), config_error);
}

TEST(Config, LoadConfigErrors) {
    const auto dir = testkit::scratch_dir("cfg");
    EXPECT_THROW(load_config(dir / "absent.json"), config_error);
    {
        std::ofstream(dir / "broken.json") << "{ not json";
    }
    EXPECT_THROW(load_config(dir / "broken.json"), config_error);
}

TEST(Config, ParseLevels) {
    const auto r = pipeline::parse_levels("0.5:0.8, 0.8:0.5");
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r[0].level, 0.5);
    EXPECT_EQ(r[1].confidence, 0.5);
    EXPECT_THROW(pipeline::parse_levels(""), config_error);
    EXPECT_THROW(pipeline::parse_levels("0.5"), config_error);
    EXPECT_THROW(pipeline::parse_levels("0.5:x"), config_error);
}

TEST(Calibrate, ThousandPairsGiveTwoHundredScores) {
    const auto dir = testkit::scratch_dir("calib");
    const auto data = write_world(dir, 1000);
    auto c = base_config(dir / "out");
    c.input = data.string();
    const auto r = run("calibrate", c);
    ASSERT_EQ(r.code, kOk) << r.err;
    EXPECT_NE(r.out.find("calibration scores: 200"), std::string::npos);
    const auto art = nlohmann::json::parse(testkit::slurp(dir / "out" / "calibrator.json"));
    EXPECT_EQ(art["n_scores"], 200);
    EXPECT_EQ(art["calibrator"]["thresholds"].size(), 2u);
    EXPECT_EQ(art["inputs"]["dataset"]["file"], "data.jsonl");
    EXPECT_EQ(r.err.rfind("config: ", 0), 0u);
}

TEST(Calibrate, OversizedCalibrationIsUsageErrorWithoutArtifact) {
    const auto dir = testkit::scratch_dir("calib_big");
    const auto data = write_world(dir, 100);
    auto c = base_config(dir / "out");
    c.input = data.string();
    c.split.calibration_size = 100;
    const auto r = run("calibrate", c);
    EXPECT_EQ(r.code, kUsage);
    EXPECT_FALSE(fs::exists(dir / "out" / "calibrator.json"));
}

TEST(Calibrate, MalformedDataIsDataError) {
    const auto dir = testkit::scratch_dir("calib_bad");
    {
        std::ofstream(dir / "bad.jsonl") << "{\"prompt_id\": 1}\n";
    }
    auto c = base_config(dir / "out");
    c.input = (dir / "bad.jsonl").string();
    EXPECT_EQ(run("calibrate", c).code, kData);
    c.input = (dir / "absent.jsonl").string();
    EXPECT_EQ(run("calibrate", c).code, kUsage);
}

TEST(Pipeline, RerunsAreByteIdentical) {
    const auto dir = testkit::scratch_dir("rerun");
    const auto data = write_world(dir, 400, 30);
    std::string first[4];
    for (int rep = 0; rep < 2; ++rep) {
        const auto out = dir / ("out" + std::to_string(rep));
        auto c = base_config(out);
        c.input = data.string();
        ASSERT_EQ(run("calibrate", c).code, kOk);
        c.calibrator = (out / "calibrator.json").string();
        ASSERT_EQ(run("weight", c).code, kOk);
        c.input = (out / "weighted.jsonl").string();
        ASSERT_EQ(run("train", c).code, kOk);
        const std::string files[4] = {"calibrator.json", "weighted.jsonl", "checkpoint.json", "trace.jsonl"};
        for (int i = 0; i < 4; ++i) {
            const auto bytes = testkit::slurp(out / files[i]);
            if (rep == 0)
                first[i] = bytes;
            else
                EXPECT_EQ(bytes, first[i]) << files[i];
        }
    }
}

TEST(Weight, AllCoreDatasetHasMeanUPointEight) {
    const auto dir = testkit::scratch_dir("allcore");
    const auto cal_data = write_flat(dir, "cal.jsonl", 300, -10.0);
    const auto easy = write_flat(dir, "easy.jsonl", 40, -0.1);
    auto c = base_config(dir / "out");
    c.input = cal_data.string();
    ASSERT_EQ(run("calibrate", c).code, kOk);
    c.calibrator = (dir / "out" / "calibrator.json").string();
    c.input = easy.string();
    const auto r = run("weight", c);
    ASSERT_EQ(r.code, kOk) << r.err;
    EXPECT_NE(r.out.find("mean u: 0.8\n"), std::string::npos) << r.out;
    const auto w = load_weighted(dir / "out" / "weighted.jsonl");
    ASSERT_EQ(w.size(), 40u);  // a foreign file is weighted whole
    for (const auto& x : w) EXPECT_EQ(x.weight, 0.8);
}

TEST(Weight, HistogramCountsBothResponses) {
    const auto dir = testkit::scratch_dir("hist");
    const auto data = write_world(dir, 500);
    auto c = base_config(dir / "out");
    c.input = data.string();
    ASSERT_EQ(run("calibrate", c).code, kOk);
    c.calibrator = (dir / "out" / "calibrator.json").string();
    ASSERT_EQ(run("weight", c).code, kOk);
    const auto m = nlohmann::json::parse(testkit::slurp(dir / "out" / "weighted.jsonl.manifest.json"));
    EXPECT_EQ(m["n_pairs"], 400);
    EXPECT_TRUE(m["calibration_split_applied"].get<bool>());
    std::size_t total = 0;
    for (const auto& [k, v] : m["stratum_histogram"].items()) total += v.get<std::size_t>();
    EXPECT_EQ(total, 800u);
    EXPECT_EQ(m["stratum_histogram"].size(), 3u);
}

TEST(Weight, EmptyInputGivesEmptyOutput) {
    const auto dir = testkit::scratch_dir("empty_weight");
    const auto cal = write_world(dir, 300);
    { std::ofstream(dir / "empty.jsonl"); }
    auto c = base_config(dir / "out");
    c.input = cal.string();
    ASSERT_EQ(run("calibrate", c).code, kOk);
    c.calibrator = (dir / "out" / "calibrator.json").string();
    c.input = (dir / "empty.jsonl").string();
    const auto r = run("weight", c);
    EXPECT_EQ(r.code, kOk) << r.err;
    EXPECT_EQ(testkit::slurp(dir / "out" / "weighted.jsonl"), "");
    EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST(Weight, MissingOrMismatchedCalibrator) {
    const auto dir = testkit::scratch_dir("weight_missing");
    const auto data = write_world(dir, 300);
    auto c = base_config(dir / "out");
    c.input = data.string();
    c.calibrator = (dir / "nope.json").string();
    EXPECT_EQ(run("weight", c).code, kUsage);
    EXPECT_FALSE(fs::exists(dir / "out" / "weighted.jsonl"));

    ASSERT_EQ(run("calibrate", c).code, kOk);
    c.calibrator = (dir / "out" / "calibrator.json").string();
    c.ladder = LevelLadder({{0.5, 0.9}, {0.8, 0.5}}, 0.25);
    const auto r = run("weight", c);
    EXPECT_EQ(r.code, kUsage);
    EXPECT_NE(r.err.find("ladder"), std::string::npos);
}

TEST(Train, ZeroWeightsLeaveInitialPolicy) {
    const auto dir = testkit::scratch_dir("train_zero");
    WorldConfig wc;
    wc.n_prompts = 10;
    wc.n_pairs = 100;
    const auto w = generate_world(wc);
    std::vector<WeightedPreferenceExample> data;
    for (const auto& ex : w.examples) {
        WeightedPreferenceExample x;
        x.example = ex;
        x.weight = 0.0;
        x.chosen_stratum = x.rejected_stratum = Stratum::outside();
        data.push_back(x);
    }
    save_weighted(std::span<const WeightedPreferenceExample>(data), dir / "w.jsonl");
    for (auto opt : {OptimizerKind::Sgd, OptimizerKind::AdamW}) {
        auto c = base_config(dir / "out");
        c.input = (dir / "w.jsonl").string();
        c.train.optimizer = opt;
        ASSERT_EQ(run("train", c).code, kOk);
        const auto ck = nlohmann::json::parse(testkit::slurp(dir / "out" / "checkpoint.json"));
        EXPECT_EQ(ck["policy"], to_json(table_from_examples(std::span<const WeightedPreferenceExample>(data))));
    }
}

TEST(Train, DpoAndPpoSummaries) {
    const auto dir = testkit::scratch_dir("train_styles");
    const auto data = write_world(dir, 400, 20);
    auto c = base_config(dir / "out");
    c.input = data.string();
    ASSERT_EQ(run("calibrate", c).code, kOk);
    c.calibrator = (dir / "out" / "calibrator.json").string();
    ASSERT_EQ(run("weight", c).code, kOk);
    c.input = (dir / "out" / "weighted.jsonl").string();

    c.train.optimizer = OptimizerKind::Sgd;
    c.train.learning_rate = 0.1;
    c.train.steps = 500;
    ASSERT_EQ(run("train", c).code, kOk);
    auto s = nlohmann::json::parse(testkit::slurp(dir / "out" / "summary.json"));
    EXPECT_LT(s["final_loss"].get<double>(), s["initial_loss"].get<double>());
    EXPECT_GT(s["final_margin"].get<double>(), 0.0);
    EXPECT_EQ(lines_of(testkit::slurp(dir / "out" / "trace.jsonl")).size(), 500u);

    c.style = "ppo";
    c.train.steps = 50;
    c.train.learning_rate = 0.05;
    const auto r = run("train", c);
    ASSERT_EQ(r.code, kOk) << r.err;
    s = nlohmann::json::parse(testkit::slurp(dir / "out" / "summary.json"));
    EXPECT_GE(s["final_mean_reward"].get<double>(), s["initial_mean_reward"].get<double>());
    EXPECT_TRUE(fs::exists(dir / "out" / "rm_trace.jsonl"));
    const auto ck1 = testkit::slurp(dir / "out" / "checkpoint.json");
    ASSERT_EQ(run("train", c).code, kOk);
    EXPECT_EQ(testkit::slurp(dir / "out" / "checkpoint.json"), ck1);
}

TEST(Train, InitVocabularyMismatchIsUsageError) {
    const auto dir = testkit::scratch_dir("train_init");
    const auto data = write_world(dir, 200, 20);
    auto c = base_config(dir / "out");
    c.input = data.string();
    ASSERT_EQ(run("calibrate", c).code, kOk);
    c.calibrator = (dir / "out" / "calibrator.json").string();
    ASSERT_EQ(run("weight", c).code, kOk);
    c.input = (dir / "out" / "weighted.jsonl").string();

    ResponseTable other;
    other.add_prompt("p0000", {"something else"});
    { std::ofstream(dir / "init.json") << nlohmann::json{{"policy", to_json(other)}}.dump(); }
    c.init = (dir / "init.json").string();
    fs::remove(dir / "out" / "checkpoint.json");
    const auto r = run("train", c);
    EXPECT_EQ(r.code, kUsage);
    EXPECT_FALSE(fs::exists(dir / "out" / "checkpoint.json"));

    c.init.clear();
    ASSERT_EQ(run("train", c).code, kOk);
    c.init = (dir / "out" / "checkpoint.json").string();
    c.out = (dir / "resumed").string();
    EXPECT_EQ(run("train", c).code, kOk);
}

TEST(Simulate, ReportsRequestedArms) {
    const auto dir = testkit::scratch_dir("simulate");
    auto c = base_config(dir / "out");
    c.n_seeds = 1;
    c.benchmark_train.steps = 500;
    c.world.n_pairs = 400;
    c.emit_dataset = true;
    const auto r = run("simulate", c);
    ASSERT_EQ(r.code, kOk) << r.err;
    const auto rep = nlohmann::json::parse(testkit::slurp(dir / "out" / "report.json"));
    EXPECT_EQ(rep["arms"].size(), 5u);
    EXPECT_TRUE(fs::exists(dir / "out" / "world.jsonl"));
    EXPECT_EQ(load_preferences(dir / "out" / "world.jsonl").size(), 400u);

    c.arms = {"base", "bogus"};
    EXPECT_EQ(run("simulate", c).code, kUsage);
}

TEST(Sweep, DataFractionHasFiveRowsPerArm) {
    const auto dir = testkit::scratch_dir("sweep");
    auto c = base_config(dir / "out");
    c.n_seeds = 1;
    c.benchmark_train.steps = 300;
    c.world.n_pairs = 400;
    c.arms = {"base", "cfa"};
    const auto r = run("sweep", c);
    ASSERT_EQ(r.code, kOk) << r.err;
    const auto j = nlohmann::json::parse(testkit::slurp(dir / "out" / "sweep.json"));
    EXPECT_EQ(j["points"].size(), 5u);
    const auto csv = lines_of(testkit::slurp(dir / "out" / "sweep.csv"));
    EXPECT_EQ(csv.size(), 1u + 5 * 2 * 3);

    c.axis = "bogus";
    EXPECT_EQ(run("sweep", c).code, kUsage);
}

TEST(Evaluate, RecordedLogScoresEachResponseOnce) {
    const auto dir = testkit::scratch_dir("evaluate");
    std::vector<PreferenceExample> v = {testkit::white_pair("p1", "yes", "no", {-0.1}, {-0.2}),
                                        testkit::white_pair("p1", "yes", "maybe", {-0.1}, {-0.3})};
    for (auto& e : v) e.prompt = "Is it?";
    save_preferences(std::span<const PreferenceExample>(v), dir / "d.jsonl");
    {
        std::ofstream log(dir / "log.jsonl");
        for (const char* r : {"yes", "no", "maybe"})
            log << recorded_log_entry(format_judge_prompt("Is it?", r), fill_format_block(8, 8, 6, 6, 10)).dump() << "\n";
    }
    auto c = base_config(dir / "out");
    c.input = (dir / "d.jsonl").string();
    c.log = (dir / "log.jsonl").string();
    const auto r = run("evaluate", c);
    ASSERT_EQ(r.code, kOk) << r.err;
    EXPECT_EQ(lines_of(testkit::slurp(dir / "out" / "evaluation.jsonl")).size(), 3u);
    const auto s = nlohmann::json::parse(testkit::slurp(dir / "out" / "evaluation_summary.json"));
    EXPECT_EQ(s["responses"], 3);

    { std::ofstream(dir / "log.jsonl"); }
    EXPECT_EQ(run("evaluate", c).code, kUsage);
}

TEST(Report, RowsMatchTraceAndLaddersMustAgree) {
    const auto dir = testkit::scratch_dir("report");
    const auto data = write_world(dir, 300, 20);
    auto c = base_config(dir / "a");
    c.input = data.string();
    ASSERT_EQ(run("calibrate", c).code, kOk);
    c.calibrator = (dir / "a" / "calibrator.json").string();
    ASSERT_EQ(run("weight", c).code, kOk);
    c.input = (dir / "a" / "weighted.jsonl").string();
    c.train.steps = 37;
    ASSERT_EQ(run("train", c).code, kOk);

    auto rc = base_config(dir / "rep");
    rc.inputs = {(dir / "a" / "trace.jsonl").string()};
    const auto r = run("report", rc);
    ASSERT_EQ(r.code, kOk) << r.err;
    std::size_t rows = 0;
    for (const auto& l : lines_of(testkit::slurp(dir / "rep" / "report.txt")))
        if (const auto k = l.find_first_not_of(' '); k != std::string::npos && std::isdigit(static_cast<unsigned char>(l[k])))
            ++rows;
    EXPECT_EQ(rows, 37u);

    auto c2 = base_config(dir / "b");
    c2.ladder = LevelLadder({{0.6, 0.8}, {0.9, 0.5}}, 0.25);
    c2.input = data.string();
    ASSERT_EQ(run("calibrate", c2).code, kOk);
    rc.inputs = {(dir / "a" / "calibrator.json").string(), (dir / "b" / "calibrator.json").string()};
    EXPECT_EQ(run("report", rc).code, kUsage);
}

TEST(Atomicity, FailedCommandLeavesNoPartialFiles) {
    const auto dir = testkit::scratch_dir("atomic");
    const auto data = write_world(dir, 200, 20);
    auto c = base_config(dir / "out");
    c.input = data.string();
    ASSERT_EQ(run("calibrate", c).code, kOk);
    c.calibrator = (dir / "out" / "calibrator.json").string();
    ASSERT_EQ(run("weight", c).code, kOk);
    const auto before = testkit::slurp(dir / "out" / "weighted.jsonl");

    // A second weight run that fails on bad data must not disturb outputs.
    { std::ofstream(dir / "bad.jsonl") << "{}\n"; }
    c.input = (dir / "bad.jsonl").string();
    EXPECT_EQ(run("weight", c).code, kData);
    EXPECT_EQ(testkit::slurp(dir / "out" / "weighted.jsonl"), before);
    for (const auto& e : fs::directory_iterator(dir / "out")) EXPECT_NE(e.path().extension(), ".tmp");
}
