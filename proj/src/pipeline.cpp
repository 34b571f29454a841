#include "bedtopo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "bedtopo/error.hpp"
#include "bedtopo/inference.hpp"

namespace bedtopo {

namespace {

void tag(std::vector<PatchIndex>& patches, Membership m) {
    for (auto& p : patches) p.membership = m;
}

}  // namespace

Experiment prepare_experiment(const Scenario& scenario, const RunConfig& cfg) {
    cfg.validate();
    const std::size_t rows = scenario.true_bed.rows(), cols = scenario.true_bed.cols();
    if (cfg.patch_size > rows || cfg.patch_size > cols)
        throw ConfigError("patch_size " + std::to_string(cfg.patch_size) + " exceeds the " + std::to_string(rows) +
                          "x" + std::to_string(cols) + " grid");
    Experiment e;
    const auto all = extract_patches(rows, cols, cfg.patch_size, cfg.stride);

    if (cfg.protocol == Protocol::random_split) {
        auto split = split_random(all, cfg.train_fraction, cfg.seed);
        e.train = std::move(split.train);
        e.validation = std::move(split.validation);
        e.train_region.assign(rows * cols, 1);
    } else {
        auto bands = split_spatial_bands(rows, cfg.bands, all);
        if (bands.empty_protocol || bands.train.empty())
            throw ConfigError("no " + std::to_string(cfg.patch_size) + "-cell patch fits inside any of the " +
                              std::to_string(cfg.bands) + " bands; use fewer bands");
        auto split = split_random(bands.train, cfg.train_fraction, cfg.seed);
        e.train = std::move(split.train);
        e.validation = std::move(split.validation);
        e.test = std::move(bands.test);
        e.test_region = test_band_mask(bands.map, cols);
        e.train_region.resize(rows * cols);
        for (std::size_t i = 0; i < e.train_region.size(); ++i) e.train_region[i] = e.test_region[i] ? 0 : 1;
        e.bands = std::move(bands.map);
    }
    tag(e.train, Membership::train);
    tag(e.validation, Membership::validation);
    tag(e.test, Membership::test);

    // Manifest order follows the extraction order.
    std::map<std::pair<std::size_t, std::size_t>, Membership> member;
    for (const auto* set : {&e.train, &e.validation, &e.test})
        for (const auto& p : *set) member[{p.row0, p.col0}] = p.membership;
    e.patches = all;
    for (auto& p : e.patches) {
        auto it = member.find({p.row0, p.col0});
        p.membership = it == member.end() ? Membership::unassigned : it->second;
    }

    const bool whole = cfg.protocol == Protocol::random_split;
    e.features = build_feature_tensor(scenario.stack, cfg.features,
                                      whole ? std::span<const std::uint8_t>{} : std::span<const std::uint8_t>(e.train_region));
    e.targets = TrainingTargets::from(scenario.observations, scenario.reference);
    return e;
}

nn::ModelConfig model_config_for(const RunConfig& cfg, std::size_t input_channels) {
    auto m = cfg.model;
    m.input_channels = input_channels;
    m.seed = cfg.seed;
    return m;
}

TrainResult run_training(const Experiment& exp, const RunConfig& cfg, const TrainObserver& observer) {
    nn::BedTopoCNN model(model_config_for(cfg, exp.features.channels));
    auto tc = cfg.train;
    tc.seed = cfg.seed;
    return train(model, exp.features, exp.targets, exp.train, exp.validation, tc, observer);
}

ElevationGrid predict_grid(nn::BedTopoCNN& model, const Experiment& exp, const RunConfig& cfg) {
    return predict_full_grid(model, exp.features, cfg.patch_size, cfg.stride, cfg.train.batch_size);
}

ObservationSet training_observations(const Scenario& scenario, const Experiment& exp) {
    ObservationSet obs = scenario.observations;
    if (exp.train_region.empty()) return obs;
    const auto& grid = scenario.true_bed;
    for (std::size_t i = 0; i < obs.mask.size(); ++i)
        if (!exp.train_region[i]) {
            obs.mask[i] = 0;
            obs.values[i] = std::nan("");
        }
    std::erase_if(obs.points, [&](const ObservationPoint& p) {
        const auto cell = grid.locate(p.x, p.y);
        return !cell || !exp.train_region[cell->row * grid.cols() + cell->col];
    });
    return obs;
}

BaselineGrid run_idw(const Scenario& scenario, const Experiment& exp, const RunConfig& cfg) {
    return idw_predict(training_observations(scenario, exp), scenario.true_bed, cfg.idw);
}

BaselineGrid run_rbf(const Scenario& scenario, const Experiment& exp, const RunConfig& cfg) {
    return rbf_predict(training_observations(scenario, exp), scenario.true_bed, cfg.rbf);
}

std::vector<MetricReport> evaluate_prediction(const ElevationGrid& prediction, const Scenario& scenario,
                                              const Experiment& exp, const RunConfig& cfg, const std::string& method) {
    std::vector<MetricReport> out;
    out.push_back(evaluate_grids(prediction, scenario.true_bed, method, "true_bed", {}, cfg.ssim));
    out.push_back(evaluate_grids(prediction, scenario.reference.grid(), method, "reference", {}, cfg.ssim));
    if (!exp.test_region.empty())
        out.push_back(evaluate_grids(prediction, scenario.true_bed, method, "true_bed_test_bands", exp.test_region,
                                     cfg.ssim));
    return out;
}

nn::GradCheckReport run_gradient_suite(std::uint64_t seed, const nn::GradCheckOptions& options) {
    nn::ModelConfig mc;
    mc.filters = {8, 16, 32, 64, 64};
    mc.input_channels = 20;
    mc.seed = seed;
    nn::BedTopoCNN model(mc);
    std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
    nn::Tensor4 x({1, 20, 8, 8});
    for (auto& v : x.vec()) v = 2.0 * nn::uniform01(rng) - 1.0;
    return nn::check_model_gradients(model, x, options);
}

}  // namespace bedtopo
