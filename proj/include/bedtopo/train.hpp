#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "bedtopo/features.hpp"
#include "bedtopo/loss.hpp"
#include "bedtopo/model.hpp"
#include "bedtopo/optim.hpp"
#include "bedtopo/patches.hpp"
#include "bedtopo/raster.hpp"
#include "bedtopo/tensor.hpp"

namespace bedtopo {

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t max_iterations = 20000;  // full passes over the training patches in epoch mode
    std::size_t patience = 5000;         // iterations without validation improvement
    double base_lr = 1e-5;
    double max_lr = 1e-3;
    std::size_t half_period = 2000;
    nn::AdamConfig adam;
    std::uint64_t seed = 0;
    bool use_reference_loss = true;
    double loss_epsilon = 1e-8;
    std::size_t validation_interval = 100;
    bool epoch_mode = false;

    // Throws ConfigError.
    void validate() const;
};

// Grid-sized supervision: radar values on radar cells, reference values on the remaining valid cells.
struct TrainingTargets {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> radar;
    std::vector<std::uint8_t> radar_mask;
    std::vector<double> reference;
    std::vector<std::uint8_t> reference_mask;

    static TrainingTargets from(const ObservationSet& obs, const ReferenceGrid& ref);
};

struct Batch {
    nn::Tensor4 input;  // (n, channels, size, size)
    std::vector<double> radar;
    std::vector<std::uint8_t> radar_mask;
    std::vector<double> reference;
    std::vector<std::uint8_t> reference_mask;
};

Batch assemble_batch(const FeatureTensor& features, const TrainingTargets& targets,
                     std::span<const PatchIndex> patches);

// Scales a raw model output to target units: the head predicts z-scores of the targets.
// Mean and standard deviation over the distinct supervised cells of `patches`.
void fit_output_affine(nn::BedTopoCNN& model, const TrainingTargets& targets, std::span<const PatchIndex> patches,
                       bool include_reference = true);

struct TraceRow {
    std::size_t iteration = 0;  // 1-based
    double lr = 0.0;
    LossBreakdown loss;
    double val_loss = 0.0;  // NaN when no validation ran at this iteration
};

struct TrainResult {
    nn::BedTopoCNN best_model;
    std::vector<TraceRow> trace;
    std::size_t best_iteration = 0;
    double best_val_loss = 0.0;
    std::size_t iterations_run = 0;
    bool early_stopped = false;
    bool validated_on_training_loss = false;  // no validation patches were usable
};

using TrainObserver = std::function<void(const TraceRow&)>;

// Mini-batches cycle through seeded permutations of `train`. The model is trained in place;
// the returned best_model is a copy taken at the best validation check.
// Throws std::invalid_argument on an empty training set and NumericalError on divergence.
TrainResult train(nn::BedTopoCNN& model, const FeatureTensor& features, const TrainingTargets& targets,
                  std::span<const PatchIndex> train, std::span<const PatchIndex> validation, const TrainConfig& cfg,
                  const TrainObserver& on_validation = {});

// Eval-mode loss pooled over every pixel of `patches`.
LossBreakdown evaluate_loss(nn::BedTopoCNN& model, const FeatureTensor& features, const TrainingTargets& targets,
                            std::span<const PatchIndex> patches, double epsilon, bool use_reference,
                            std::size_t batch_size = 16);

// `iteration,lr,l_r,l_m,gamma_r,gamma_m,total,val_loss`; val_loss is empty when not evaluated.
void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> trace);

}  // namespace bedtopo
