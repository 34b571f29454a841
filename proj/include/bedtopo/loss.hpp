#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace bedtopo {

struct LossBreakdown {
    double l_r = 0.0;  // mean squared error over radar cells
    double l_m = 0.0;  // mean squared error over reference-only cells
    double gamma_r = 0.0;
    double gamma_m = 0.0;
    double epsilon = 0.0;
    double total = 0.0;
    std::size_t radar_pixel_count = 0;
    std::size_t reference_pixel_count = 0;
};

// gamma_r = l_m / (l_r + l_m + eps), gamma_m = l_r / (l_r + l_m + eps).
// When the denominator is exactly zero both weights are 0.5.
std::pair<double, double> dynamic_weights(double l_r, double l_m, double epsilon);

struct LossResult {
    LossBreakdown breakdown;
    std::vector<double> grad;  // d total / d pred, weights held constant
};

// All spans share the prediction's length. `radar_mask` and `reference_mask` must be disjoint.
// Empty radar set: total = l_m (gamma_m = 1). Empty reference set or use_reference = false:
// total = l_r (gamma_r = 1). Both empty: std::invalid_argument.
LossResult dynamic_loss(std::span<const double> pred, std::span<const double> radar,
                        std::span<const std::uint8_t> radar_mask, std::span<const double> reference,
                        std::span<const std::uint8_t> reference_mask, double epsilon, bool use_reference = true);

}  // namespace bedtopo
