#include "bedtopo/inference.hpp"

#include <algorithm>

#include "bedtopo/error.hpp"
#include "bedtopo/train.hpp"

namespace bedtopo {

StitchAccumulator::StitchAccumulator(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), sum_(rows * cols, 0.0), count_(rows * cols, 0) {}

void StitchAccumulator::add(const PatchIndex& patch, std::span<const double> values) {
    const std::size_t s = patch.size;
    if (patch.row0 + s > rows_ || patch.col0 + s > cols_) throw DimensionError("patch exceeds the stitch grid");
    if (values.size() != s * s) throw DimensionError("patch prediction has the wrong number of values");
    for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = 0; c < s; ++c) {
            const auto i = (patch.row0 + r) * cols_ + patch.col0 + c;
            sum_[i] += values[r * s + c];
            ++count_[i];
        }
}

ElevationGrid StitchAccumulator::finish(const GeoTransform& geo, std::span<const std::uint8_t> valid,
                                        bool require_full) const {
    if (!valid.empty() && valid.size() != sum_.size()) throw DimensionError("validity mask does not match the grid");
    std::vector<double> values(sum_.size(), 0.0);
    std::vector<std::uint8_t> ok(sum_.size(), 0);
    for (std::size_t i = 0; i < sum_.size(); ++i) {
        if (count_[i] == 0) {
            if (require_full)
                throw StateError("cell (" + std::to_string(i / cols_) + ", " + std::to_string(i % cols_) +
                                 ") was not covered by any patch");
            continue;
        }
        values[i] = sum_[i] / static_cast<double>(count_[i]);
        ok[i] = valid.empty() ? 1 : valid[i];
    }
    return ElevationGrid(rows_, cols_, geo, std::move(values), std::move(ok));
}

ElevationGrid predict_full_grid(nn::BedTopoCNN& model, const FeatureTensor& features, std::size_t size,
                                std::size_t stride, std::size_t batch_size) {
    if (features.channels != model.config().input_channels)
        throw DimensionError("model expects " + std::to_string(model.config().input_channels) +
                             " input channels, features have " + std::to_string(features.channels));
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    const auto patches = extract_patches(features.rows, features.cols, size, stride);

    // Targets are irrelevant here; an empty set keeps assemble_batch's geometry checks.
    TrainingTargets none;
    none.rows = features.rows;
    none.cols = features.cols;
    none.radar.assign(features.plane(), 0.0);
    none.reference = none.radar;
    none.radar_mask.assign(features.plane(), 0);
    none.reference_mask = none.radar_mask;

    StitchAccumulator acc(features.rows, features.cols);
    const std::size_t pp = size * size;
    for (std::size_t k = 0; k < patches.size(); k += batch_size) {
        const std::span<const PatchIndex> chunk(patches.data() + k, std::min(batch_size, patches.size() - k));
        const auto b = assemble_batch(features, none, chunk);
        const auto out = model.forward(b.input, nn::Mode::eval);
        for (std::size_t j = 0; j < chunk.size(); ++j) acc.add(chunk[j], out.span().subspan(j * pp, pp));
    }
    return acc.finish(features.geo, features.valid, true);
}

ElevationGrid difference_grid(const ElevationGrid& prediction, const ElevationGrid& reference) {
    if (!prediction.same_layout(reference)) throw DimensionError("prediction and reference grids differ in layout");
    std::vector<double> v(prediction.size(), 0.0);
    std::vector<std::uint8_t> ok(prediction.size(), 0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!prediction.validity()[i] || !reference.validity()[i]) continue;
        v[i] = prediction.values()[i] - reference.values()[i];
        ok[i] = 1;
    }
    return ElevationGrid(prediction.rows(), prediction.cols(), prediction.geo(), std::move(v), std::move(ok));
}

}  // namespace bedtopo
