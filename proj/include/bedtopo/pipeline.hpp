#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bedtopo/baselines.hpp"
#include "bedtopo/config.hpp"
#include "bedtopo/features.hpp"
#include "bedtopo/gradcheck.hpp"
#include "bedtopo/metrics.hpp"
#include "bedtopo/model.hpp"
#include "bedtopo/patches.hpp"
#include "bedtopo/synth.hpp"
#include "bedtopo/train.hpp"

namespace bedtopo {

// Everything derived from a scenario and a run configuration before training.
struct Experiment {
    FeatureTensor features;
    TrainingTargets targets;
    std::vector<PatchIndex> patches;  // every patch with its membership
    std::vector<PatchIndex> train;
    std::vector<PatchIndex> validation;
    std::vector<PatchIndex> test;
    std::optional<BandMap> bands;
    std::vector<std::uint8_t> train_region;  // cells whose data may be used for fitting
    std::vector<std::uint8_t> test_region;   // empty: evaluate on the whole grid only
};

// Random split: train/validation over all patches, normalization over the whole grid.
// Spatial bands: train-band patches split again into train/validation, test-band patches held
// out, normalization statistics and baseline observations restricted to train bands.
Experiment prepare_experiment(const Scenario& scenario, const RunConfig& cfg);

nn::ModelConfig model_config_for(const RunConfig& cfg, std::size_t input_channels);

TrainResult run_training(const Experiment& exp, const RunConfig& cfg, const TrainObserver& observer = {});

ElevationGrid predict_grid(nn::BedTopoCNN& model, const Experiment& exp, const RunConfig& cfg);

// Radar observations inside the training region.
ObservationSet training_observations(const Scenario& scenario, const Experiment& exp);

BaselineGrid run_idw(const Scenario& scenario, const Experiment& exp, const RunConfig& cfg);
BaselineGrid run_rbf(const Scenario& scenario, const Experiment& exp, const RunConfig& cfg);

// Reports against the true bed and the reference grid over the full grid, plus the true bed
// over the test region when there is one.
std::vector<MetricReport> evaluate_prediction(const ElevationGrid& prediction, const Scenario& scenario,
                                              const Experiment& exp, const RunConfig& cfg, const std::string& method);

// Finite-difference check of the reduced network ([8, 16, 32, 64, 64] filters) on a random
// 1x20x8x8 input.
nn::GradCheckReport run_gradient_suite(std::uint64_t seed, const nn::GradCheckOptions& options = {});

}  // namespace bedtopo
