#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bedtopo/raster.hpp"

namespace bedtopo {

struct GradientPair {
    ElevationGrid ddx;  // along columns (x)
    ElevationGrid ddy;  // along rows (y)
};

// Central differences in the interior, one-sided on the borders, unit index spacing.
// A gradient cell is invalid when any cell of its stencil is invalid.
GradientPair compute_gradients(const ElevationGrid& field);

// Degree-2 polynomial in coordinates scaled to [-1, 1]^2 over the grid's cell centers.
// Coefficient order: 1, u, v, u^2, u*v, v^2.
struct TrendSurfaceModel {
    static constexpr int kDegree = 2;
    static constexpr std::size_t kCoefficients = 6;

    std::array<double, kCoefficients> coefficients{};
    double x_min = 0.0, x_max = 1.0;
    double y_min = 0.0, y_max = 1.0;
    double residual_sum_squares = 0.0;
    std::size_t sample_count = 0;

    double scaled_x(double x) const { return 2.0 * (x - x_min) / (x_max - x_min) - 1.0; }
    double scaled_y(double y) const { return 2.0 * (y - y_min) / (y_max - y_min) - 1.0; }
    double evaluate_scaled(double u, double v) const;
    double evaluate(double x, double y) const { return evaluate_scaled(scaled_x(x), scaled_y(y)); }
    // Evaluated at every cell center of `layout`; all cells valid.
    ElevationGrid evaluate_on(const ElevationGrid& layout) const;
};

// Least-squares fit over the valid cells. Throws DegenerateFitError with fewer than 6
// valid cells or a rank-deficient design (e.g. all samples on one line).
TrendSurfaceModel fit_trend_surface(const ElevationGrid& field);

struct FeatureToggles {
    bool gradients = true;
    bool trends = true;
};

struct ChannelStats {
    double mean = 0.0;
    double stddev = 1.0;
    bool constant = false;
};

// Channel-major stack of model inputs.
//
// Fixed channel order (families that are disabled are skipped):
//   raw:       s, vx, vy, dhdt, smb
//   gradients: d(s)/dx, d(s)/dy, d(vx)/dx, d(vx)/dy, ..., d(smb)/dy
//   trends:    trend(s), trend(vx), trend(vy), trend(dhdt), trend(smb)
struct FeatureTensor {
    std::size_t channels = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    GeoTransform geo;
    std::vector<double> values;        // channels * rows * cols
    std::vector<std::uint8_t> valid;   // rows * cols; a cell is valid when every channel is
    std::vector<ChannelStats> stats;   // normalization applied to `values`
    std::vector<std::string> names;

    std::size_t plane() const { return rows * cols; }
    double at(std::size_t ch, std::size_t r, std::size_t c) const { return values[ch * plane() + r * cols + c]; }
    std::span<const double> channel(std::size_t ch) const { return {values.data() + ch * plane(), plane()}; }
};

std::size_t feature_channel_count(const FeatureToggles& toggles);

// Unnormalized channels (stats left at mean 0 / stddev 1).
FeatureTensor build_raw_features(const FieldStack& stack, const FeatureToggles& toggles);

// Per-channel mean and population standard deviation over valid cells inside `region`
// (all cells when empty). A channel whose spread is negligible is flagged constant.
std::vector<ChannelStats> channel_statistics(const FeatureTensor& raw, std::span<const std::uint8_t> region = {});

// z-scores every channel in place; constant channels and invalid cells become 0.
void apply_normalization(FeatureTensor& tensor, std::span<const ChannelStats> stats);

// Raw channels normalized with statistics from `region` (the training region).
FeatureTensor build_feature_tensor(const FieldStack& stack, const FeatureToggles& toggles,
                                   std::span<const std::uint8_t> region = {});

// BTF1: "BTF1", u32 channels, u32 rows, u32 cols, f64 x0 y0 dx dy,
// per channel {u32 name length, name bytes, f64 mean, f64 stddev, u8 constant},
// channels*rows*cols f64 values,
// rows*cols u8 validity.
std::vector<std::uint8_t> encode_features(const FeatureTensor& tensor);
FeatureTensor decode_features(std::span<const std::uint8_t> bytes);
void write_features(const std::filesystem::path& path, const FeatureTensor& tensor);
FeatureTensor read_features(const std::filesystem::path& path);

}  // namespace bedtopo
