#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bedtopo/baselines.hpp"
#include "bedtopo/features.hpp"
#include "bedtopo/metrics.hpp"
#include "bedtopo/model.hpp"
#include "bedtopo/synth.hpp"
#include "bedtopo/train.hpp"

namespace bedtopo {

enum class Protocol { random_split, spatial_bands };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

struct RunConfig {
    std::filesystem::path scenario_dir = "scenario";
    std::filesystem::path output_dir;  // empty: resolved by default_output_dir()
    std::filesystem::path checkpoint;  // empty: <output_dir>/model.btck

    std::uint64_t seed = 42;
    SynthParams synth;
    FeatureToggles features;
    std::size_t patch_size = 16;
    std::size_t stride = 8;
    Protocol protocol = Protocol::random_split;
    double train_fraction = 0.8;
    std::size_t bands = 30;

    nn::ModelConfig model;  // input_channels is derived from the feature toggles
    TrainConfig train;
    IdwConfig idw;
    RbfConfig rbf;
    SsimOptions ssim;

    // Throws ConfigError naming the offending field.
    void validate() const;
    std::filesystem::path resolved_output_dir() const;
    std::filesystem::path resolved_checkpoint() const;
};

// Every key is optional; unknown keys (at any nesting level) raise ConfigError listing all of them
// by dotted path.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_json(const RunConfig& cfg);

// $BEDTOPO_OUTPUT_DIR when set and non-empty, otherwise "bedtopo_out".
std::filesystem::path default_output_dir();

}  // namespace bedtopo
