#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "test_support.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run run_cli(const fs::path& dir, const std::string& args) {
    const auto log = dir / "cli.log";
    const std::string cmd = "cd '" + dir.string() + "' && '" + std::string(BEDTOPO_CLI_PATH) + "' " + args + " > '" +
                            log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::ostringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

const char* kSmallConfig = R"({
  "scenario_dir": "scen", "output_dir": "out", "seed": 5,
  "synth": {"rows": 64, "cols": 64},
  "model": {"filters": [4, 4, 8, 8, 8]},
  "train": {"batch_size": 4, "max_iterations": 6, "patience": 6, "validation_interval": 3, "half_period": 3},
  "rbf": {"max_centers": 300}
})";

}  // namespace

TEST(Cli, FullPipeline) {
    bedtopo::testing_support::TempDir dir("cli");
    write_text(dir / "cfg.json", kSmallConfig);
    for (const char* cmd : {"synth", "features", "train -q", "predict", "evaluate", "baseline"}) {
        const auto r = run_cli(dir.path(), std::string("-c cfg.json ") + cmd);
        ASSERT_EQ(r.code, 0) << cmd << ":\n" << r.output;
    }
    for (const char* f : {"scen/true_bed.btg", "scen/scenario.json", "out/features.btf", "out/split.csv",
                          "out/model.btck", "out/loss_trace.csv", "out/prediction.btg", "out/difference.btg",
                          "out/metrics.json", "out/metrics.csv", "out/idw.btg", "out/rbf.btg",
                          "out/baseline_metrics.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    const auto m = read_json(dir / "out/metrics.json");
    ASSERT_TRUE(m.is_array());
    EXPECT_EQ(m[0]["target"], "true_bed");
    EXPECT_EQ(m[0]["cells"], 64 * 64);

    // the reference grid scored against itself
    const auto r = run_cli(dir.path(), "-c cfg.json -o self evaluate --pred scen/reference.btg --label ref");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto self = read_json(dir / "self/metrics.json");
    EXPECT_EQ(self[1]["target"], "reference");
    EXPECT_EQ(self[1]["mae"], 0.0);
    EXPECT_TRUE(self[1]["psnr_infinite"].get<bool>());
}

TEST(Cli, SeedOverrideIsDeterministic) {
    bedtopo::testing_support::TempDir dir("cli");
    write_text(dir / "cfg.json", kSmallConfig);
    ASSERT_EQ(run_cli(dir.path(), "-c cfg.json -s a --seed 9 synth").code, 0);
    ASSERT_EQ(run_cli(dir.path(), "-c cfg.json -s b --seed 9 synth").code, 0);
    std::ifstream a(dir / "a/true_bed.btg", std::ios::binary), b(dir / "b/true_bed.btg", std::ios::binary);
    std::ostringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(Cli, UnknownConfigKeyExitsOne) {
    bedtopo::testing_support::TempDir dir("cli");
    write_text(dir / "cfg.json", R"({"strid": 8})");
    const auto r = run_cli(dir.path(), "-c cfg.json features");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("strid"), std::string::npos) << r.output;
}

TEST(Cli, MissingScenarioExitsOne) {
    bedtopo::testing_support::TempDir dir("cli");
    const auto r = run_cli(dir.path(), "-s nowhere train");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("nowhere"), std::string::npos) << r.output;
}

TEST(Cli, UsageErrorsExitOne) {
    bedtopo::testing_support::TempDir dir("cli");
    EXPECT_EQ(run_cli(dir.path(), "").code, 1);
    EXPECT_EQ(run_cli(dir.path(), "frobnicate").code, 1);
    EXPECT_EQ(run_cli(dir.path(), "baseline --method kriging").code, 1);
    EXPECT_EQ(run_cli(dir.path(), "--help").code, 0);
}

TEST(Cli, CorruptInputIsRuntimeError) {
    bedtopo::testing_support::TempDir dir("cli");
    write_text(dir / "cfg.json", kSmallConfig);
    ASSERT_EQ(run_cli(dir.path(), "-c cfg.json synth").code, 0);
    write_text(dir / "scen/s.btg", "garbage");
    EXPECT_EQ(run_cli(dir.path(), "-c cfg.json features").code, 2);
}

TEST(Cli, GradientCheckPasses) {
    bedtopo::testing_support::TempDir dir("cli");
    const auto r = run_cli(dir.path(), "gradcheck");
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("PASS"), std::string::npos);
}
