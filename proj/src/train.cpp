#include "bedtopo/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "bedtopo/error.hpp"

namespace bedtopo {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool has_radar(const TrainingTargets& t, const PatchIndex& p) {
    for (std::size_t r = p.row0; r < p.row0 + p.size; ++r)
        for (std::size_t c = p.col0; c < p.col0 + p.size; ++c)
            if (t.radar_mask[r * t.cols + c]) return true;
    return false;
}

std::size_t supervised_count(const TrainingTargets& t, std::span<const PatchIndex> patches, bool use_reference) {
    std::size_t n = 0;
    for (const auto& p : patches)
        for (std::size_t r = p.row0; r < p.row0 + p.size; ++r)
            for (std::size_t c = p.col0; c < p.col0 + p.size; ++c) {
                const auto i = r * t.cols + c;
                n += t.radar_mask[i] || (use_reference && t.reference_mask[i]);
            }
    return n;
}

void check_geometry(const FeatureTensor& f, const TrainingTargets& t, std::span<const PatchIndex> patches) {
    if (f.rows != t.rows || f.cols != t.cols)
        throw DimensionError("features are " + std::to_string(f.rows) + "x" + std::to_string(f.cols) +
                             " but targets are " + std::to_string(t.rows) + "x" + std::to_string(t.cols));
    for (const auto& p : patches)
        if (p.size == 0 || p.row0 + p.size > f.rows || p.col0 + p.size > f.cols)
            throw DimensionError("patch at (" + std::to_string(p.row0) + ", " + std::to_string(p.col0) +
                                 ") exceeds the grid");
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (max_iterations == 0) throw ConfigError("max_iterations must be positive");
    if (!(base_lr > 0.0 && base_lr <= max_lr)) throw ConfigError("learning rates must satisfy 0 < base_lr <= max_lr");
    if (!epoch_mode && patience > max_iterations) throw ConfigError("patience must not exceed max_iterations");
    if (validation_interval == 0) throw ConfigError("validation_interval must be positive");
    if (!(loss_epsilon >= 0.0)) throw ConfigError("loss_epsilon must be non-negative");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.epsilon > 0.0))
        throw ConfigError("Adam betas must lie in [0, 1) and epsilon must be positive");
}

TrainingTargets TrainingTargets::from(const ObservationSet& obs, const ReferenceGrid& ref) {
    const auto& g = ref.grid();
    if (obs.rows != g.rows() || obs.cols != g.cols()) throw DimensionError("observations do not match the reference grid");
    TrainingTargets t;
    t.rows = g.rows();
    t.cols = g.cols();
    t.radar_mask.assign(ref.radar_mask().begin(), ref.radar_mask().end());
    t.reference_mask.assign(ref.reference_mask().begin(), ref.reference_mask().end());
    t.radar.assign(g.size(), 0.0);
    t.reference.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (t.radar_mask[i]) t.radar[i] = obs.values[i];
        if (t.reference_mask[i]) t.reference[i] = g.values()[i];
    }
    return t;
}

Batch assemble_batch(const FeatureTensor& features, const TrainingTargets& targets,
                     std::span<const PatchIndex> patches) {
    check_geometry(features, targets, patches);
    if (patches.empty()) throw std::invalid_argument("cannot assemble an empty batch");
    const std::size_t s = patches.front().size;
    for (const auto& p : patches)
        if (p.size != s) throw DimensionError("patches in one batch must share a size");
    const std::size_t n = patches.size(), ch = features.channels, pp = s * s;

    Batch b;
    b.input = nn::Tensor4({n, ch, s, s});
    b.radar.resize(n * pp);
    b.radar_mask.resize(n * pp);
    b.reference.resize(n * pp);
    b.reference_mask.resize(n * pp);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& p = patches[k];
        for (std::size_t c = 0; c < ch; ++c) {
            double* dst = b.input.plane(k, c);
            for (std::size_t r = 0; r < s; ++r) {
                const double* src = features.values.data() + c * features.plane() + (p.row0 + r) * features.cols + p.col0;
                std::copy_n(src, s, dst + r * s);
            }
        }
        for (std::size_t r = 0; r < s; ++r)
            for (std::size_t c = 0; c < s; ++c) {
                const auto g = (p.row0 + r) * targets.cols + p.col0 + c;
                const auto o = k * pp + r * s + c;
                b.radar[o] = targets.radar[g];
                b.radar_mask[o] = targets.radar_mask[g];
                b.reference[o] = targets.reference[g];
                b.reference_mask[o] = targets.reference_mask[g];
            }
    }
    return b;
}

void fit_output_affine(nn::BedTopoCNN& model, const TrainingTargets& targets, std::span<const PatchIndex> patches,
                       bool include_reference) {
    std::vector<std::uint8_t> seen(targets.rows * targets.cols, 0);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& p : patches)
        for (std::size_t r = p.row0; r < p.row0 + p.size; ++r)
            for (std::size_t c = p.col0; c < p.col0 + p.size; ++c) {
                const auto i = r * targets.cols + c;
                if (seen[i]) continue;
                seen[i] = 1;
                double v;
                if (targets.radar_mask[i])
                    v = targets.radar[i];
                else if (include_reference && targets.reference_mask[i])
                    v = targets.reference[i];
                else
                    continue;
                sum += v;
                sq += v * v;
                ++n;
            }
    if (n == 0) {
        model.set_output_affine(0.0, 1.0);
        return;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
    const double sd = std::sqrt(var);
    model.set_output_affine(mean, sd > 1e-12 ? sd : 1.0);
}

LossBreakdown evaluate_loss(nn::BedTopoCNN& model, const FeatureTensor& features, const TrainingTargets& targets,
                            std::span<const PatchIndex> patches, double epsilon, bool use_reference,
                            std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    std::vector<double> pred, radar, reference;
    std::vector<std::uint8_t> rmask, mmask;
    for (std::size_t k = 0; k < patches.size(); k += batch_size) {
        const auto chunk = patches.subspan(k, std::min(batch_size, patches.size() - k));
        auto b = assemble_batch(features, targets, chunk);
        const auto out = model.forward(b.input, nn::Mode::eval);
        pred.insert(pred.end(), out.vec().begin(), out.vec().end());
        radar.insert(radar.end(), b.radar.begin(), b.radar.end());
        reference.insert(reference.end(), b.reference.begin(), b.reference.end());
        rmask.insert(rmask.end(), b.radar_mask.begin(), b.radar_mask.end());
        mmask.insert(mmask.end(), b.reference_mask.begin(), b.reference_mask.end());
    }
    return dynamic_loss(pred, radar, rmask, reference, mmask, epsilon, use_reference).breakdown;
}

TrainResult train(nn::BedTopoCNN& model, const FeatureTensor& features, const TrainingTargets& targets,
                  std::span<const PatchIndex> train_patches, std::span<const PatchIndex> validation,
                  const TrainConfig& cfg, const TrainObserver& on_validation) {
    cfg.validate();
    check_geometry(features, targets, train_patches);
    check_geometry(features, targets, validation);
    if (features.channels != model.config().input_channels)
        throw DimensionError("model expects " + std::to_string(model.config().input_channels) +
                             " input channels, features have " + std::to_string(features.channels));

    // Without the reference loss only patches carrying radar cells supervise anything.
    std::vector<PatchIndex> pool, val;
    for (const auto& p : train_patches)
        if (cfg.use_reference_loss ? supervised_count(targets, {&p, 1}, true) > 0 : has_radar(targets, p))
            pool.push_back(p);
    if (pool.empty()) throw std::invalid_argument("training set has no supervised patches");
    for (const auto& p : validation)
        if (supervised_count(targets, {&p, 1}, cfg.use_reference_loss) > 0) val.push_back(p);

    fit_output_affine(model, targets, pool, cfg.use_reference_loss);
    model.reseed_dropout(cfg.seed ^ 0xd1b54a32d192ed03ULL);

    const std::size_t batches_per_epoch = (pool.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_iterations = cfg.epoch_mode ? cfg.max_iterations * batches_per_epoch : cfg.max_iterations;
    const std::size_t patience = cfg.epoch_mode ? cfg.patience * batches_per_epoch : cfg.patience;

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;

    nn::Adam adam(cfg.adam);
    auto params = model.parameters();

    TrainResult result{model, {}, 0, std::numeric_limits<double>::infinity(), 0, false, val.empty()};
    result.trace.reserve(total_iterations);
    double interval_sum = 0.0;
    std::size_t interval_n = 0;
    std::vector<PatchIndex> batch_patches;
    batch_patches.reserve(cfg.batch_size);

    for (std::size_t it = 1; it <= total_iterations; ++it) {
        batch_patches.clear();
        const std::size_t take = std::min(cfg.batch_size, pool.size());
        while (batch_patches.size() < take) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch_patches.push_back(pool[order[cursor++]]);
        }
        const auto b = assemble_batch(features, targets, batch_patches);
        const auto out = model.forward(b.input, nn::Mode::train);
        auto loss = dynamic_loss(out.vec(), b.radar, b.radar_mask, b.reference, b.reference_mask, cfg.loss_epsilon,
                                 cfg.use_reference_loss);
        if (!std::isfinite(loss.breakdown.total))
            throw NumericalError("training diverged at iteration " + std::to_string(it) + " (loss " +
                                 std::to_string(loss.breakdown.total) + ")");

        model.zero_grad();
        model.backward(nn::Tensor4(out.shape(), std::move(loss.grad)));
        const double lr = nn::cyclic_lr(it - 1, cfg.base_lr, cfg.max_lr, cfg.half_period);
        try {
            adam.step(params, lr);
        } catch (const NumericalError& e) {
            throw NumericalError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
        }

        TraceRow row{it, lr, loss.breakdown, kNaN};
        interval_sum += loss.breakdown.total;
        ++interval_n;
        result.iterations_run = it;

        const bool check = it % cfg.validation_interval == 0 || it == total_iterations;
        if (check) {
            double v;
            if (val.empty()) {
                v = interval_sum / static_cast<double>(interval_n);
            } else {
                v = evaluate_loss(model, features, targets, val, cfg.loss_epsilon, cfg.use_reference_loss,
                                  cfg.batch_size)
                        .total;
            }
            interval_sum = 0.0;
            interval_n = 0;
            if (!std::isfinite(v))
                throw NumericalError("validation loss is not finite at iteration " + std::to_string(it));
            row.val_loss = v;
            result.trace.push_back(row);
            if (on_validation) on_validation(row);
            if (v < result.best_val_loss) {
                result.best_val_loss = v;
                result.best_iteration = it;
                result.best_model = model;
            } else if (it - result.best_iteration >= patience) {
                result.early_stopped = it < total_iterations;
                break;
            }
        } else {
            result.trace.push_back(row);
        }
    }
    return result;
}

void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> trace) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write loss trace " + path.string());
    out.precision(17);
    out << "iteration,lr,l_r,l_m,gamma_r,gamma_m,total,val_loss\n";
    for (const auto& r : trace) {
        out << r.iteration << ',' << r.lr << ',' << r.loss.l_r << ',' << r.loss.l_m << ',' << r.loss.gamma_r << ','
            << r.loss.gamma_m << ',' << r.loss.total << ',';
        if (!std::isnan(r.val_loss)) out << r.val_loss;
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing loss trace " + path.string());
}

}  // namespace bedtopo
