#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bedtopo/features.hpp"
#include "bedtopo/model.hpp"
#include "bedtopo/patches.hpp"
#include "bedtopo/raster.hpp"

namespace bedtopo {

// Running per-cell sum and count of overlapping patch predictions.
class StitchAccumulator {
public:
    StitchAccumulator(std::size_t rows, std::size_t cols);

    // `values` holds patch.size * patch.size predictions in row-major order.
    void add(const PatchIndex& patch, std::span<const double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    const std::vector<double>& sum() const { return sum_; }
    const std::vector<std::size_t>& count() const { return count_; }

    // sum / count; cells with count 0 are invalid unless `require_full` is set, in which case
    // they raise StateError.
    ElevationGrid finish(const GeoTransform& geo, std::span<const std::uint8_t> valid = {},
                         bool require_full = true) const;

private:
    std::size_t rows_, cols_;
    std::vector<double> sum_;
    std::vector<std::size_t> count_;
};

// Sliding-window eval-mode prediction stitched by uniform averaging. Cells whose features are
// invalid are flagged invalid in the output.
ElevationGrid predict_full_grid(nn::BedTopoCNN& model, const FeatureTensor& features, std::size_t size,
                                std::size_t stride, std::size_t batch_size = 16);

// prediction - reference; valid where both are.
ElevationGrid difference_grid(const ElevationGrid& prediction, const ElevationGrid& reference);

}  // namespace bedtopo
