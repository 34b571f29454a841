#include <gtest/gtest.h>

#include <cstdlib>

#include "bedtopo/config.hpp"
#include "bedtopo/error.hpp"
#include "test_support.hpp"

using namespace bedtopo;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_run_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
    const auto c = parse_run_config("{}");
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.patch_size, 16u);
    EXPECT_EQ(c.stride, 8u);
    EXPECT_EQ(c.protocol, Protocol::random_split);
    EXPECT_EQ(c.model.filters, (std::vector<std::size_t>{32, 64, 128, 256, 256}));
}

TEST(Config, TypoIsRejectedByName) {
    const auto msg = error_of(R"({"strid": 8})");
    EXPECT_NE(msg.find("strid"), std::string::npos) << msg;
}

TEST(Config, NestedUnknownKeysListedByPath) {
    const auto msg = error_of(R"({"train": {"batchsize": 4}, "model": {"filter": [1]}, "synth": {"rowz": 9}})");
    EXPECT_NE(msg.find("train.batchsize"), std::string::npos) << msg;
    EXPECT_NE(msg.find("model.filter"), std::string::npos) << msg;
    EXPECT_NE(msg.find("synth.rowz"), std::string::npos) << msg;
}

TEST(Config, InvalidValues) {
    EXPECT_NE(error_of(R"({"train": {"max_iterations": 10}})").find("patience"), std::string::npos);
    EXPECT_FALSE(error_of(R"({"stride": 0})").empty());
    EXPECT_FALSE(error_of(R"({"stride": 17})").empty());
    EXPECT_FALSE(error_of(R"({"protocol": "kfold"})").empty());
    EXPECT_FALSE(error_of(R"({"model": {"filters": [8, 8, 8, 8]}})").empty());
    EXPECT_FALSE(error_of(R"({"seed": -1})").empty());
    EXPECT_FALSE(error_of(R"({"patch_size": "16"})").empty());
    EXPECT_FALSE(error_of("{not json").empty());
    EXPECT_FALSE(error_of(R"({"synth": {"rows": 10}})").empty());
}

TEST(Config, RoundTrip) {
    auto c = parse_run_config(R"({"seed": 7, "protocol": "spatial-bands", "bands": 6,
        "features": {"gradients": false}, "model": {"filters": [8, 16, 32, 64, 64], "dropout": 0.1},
        "train": {"max_iterations": 33, "patience": 33, "use_reference_loss": false}, "rbf": {"ridge": 0.5},
        "synth": {"rows": 96}})");
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.model.seed, 7u);
    EXPECT_EQ(c.train.seed, 7u);
    EXPECT_EQ(c.protocol, Protocol::spatial_bands);
    EXPECT_FALSE(c.features.gradients);
    EXPECT_TRUE(c.features.trends);
    EXPECT_EQ(c.synth.rows, 96u);
    const auto back = parse_run_config(run_config_json(c));
    EXPECT_EQ(run_config_json(back), run_config_json(c));
    EXPECT_EQ(back.train.max_iterations, 33u);
    EXPECT_EQ(back.rbf.ridge, 0.5);
}

TEST(Config, OutputDirectoryResolution) {
    const char* old = std::getenv("BEDTOPO_OUTPUT_DIR");
    const std::string saved = old ? old : "";
    ::setenv("BEDTOPO_OUTPUT_DIR", "/tmp/elsewhere", 1);
    auto c = parse_run_config("{}");
    EXPECT_EQ(c.resolved_output_dir(), "/tmp/elsewhere");
    EXPECT_EQ(c.resolved_checkpoint(), std::filesystem::path("/tmp/elsewhere/model.btck"));
    c.output_dir = "explicit";
    EXPECT_EQ(c.resolved_output_dir(), "explicit");
    ::setenv("BEDTOPO_OUTPUT_DIR", "", 1);
    EXPECT_EQ(default_output_dir(), "bedtopo_out");
    if (old) ::setenv("BEDTOPO_OUTPUT_DIR", saved.c_str(), 1);
    else ::unsetenv("BEDTOPO_OUTPUT_DIR");
}

TEST(Config, MissingFile) {
    EXPECT_THROW(load_run_config("/nonexistent/cfg.json"), ConfigError);
}
