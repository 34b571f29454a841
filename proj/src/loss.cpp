#include "bedtopo/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <tuple>

#include "bedtopo/error.hpp"

namespace bedtopo {

std::pair<double, double> dynamic_weights(double l_r, double l_m, double epsilon) {
    const double denom = l_r + l_m + epsilon;
    if (denom == 0.0) return {0.5, 0.5};
    return {l_m / denom, l_r / denom};
}

LossResult dynamic_loss(std::span<const double> pred, std::span<const double> radar,
                        std::span<const std::uint8_t> radar_mask, std::span<const double> reference,
                        std::span<const std::uint8_t> reference_mask, double epsilon, bool use_reference) {
    const std::size_t n = pred.size();
    if (radar.size() != n || radar_mask.size() != n || reference.size() != n || reference_mask.size() != n)
        throw DimensionError("dynamic loss: prediction, targets and masks must have equal length");
    if (!(epsilon >= 0.0)) throw std::invalid_argument("dynamic loss: epsilon must be non-negative");

    LossResult out;
    LossBreakdown& b = out.breakdown;
    b.epsilon = epsilon;
    double sr = 0.0, sm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (radar_mask[i] && reference_mask[i])
            throw std::invalid_argument("dynamic loss: radar and reference masks overlap at index " + std::to_string(i));
        if (radar_mask[i]) {
            const double d = pred[i] - radar[i];
            sr += d * d;
            ++b.radar_pixel_count;
        } else if (reference_mask[i]) {
            const double d = pred[i] - reference[i];
            sm += d * d;
            ++b.reference_pixel_count;
        }
    }
    const std::size_t nr = b.radar_pixel_count;
    const std::size_t nm = use_reference ? b.reference_pixel_count : 0;
    if (nr == 0 && nm == 0)
        throw std::invalid_argument(use_reference ? "dynamic loss: both radar and reference masks are empty"
                                                  : "dynamic loss: radar mask is empty and the reference loss is disabled");
    b.l_r = nr ? sr / static_cast<double>(nr) : 0.0;
    b.l_m = b.reference_pixel_count ? sm / static_cast<double>(b.reference_pixel_count) : 0.0;

    if (nr > 0 && nm > 0) {
        std::tie(b.gamma_r, b.gamma_m) = dynamic_weights(b.l_r, b.l_m, epsilon);
        b.total = b.gamma_r * b.l_r + b.gamma_m * b.l_m;
    } else if (nr > 0) {
        b.gamma_r = 1.0;
        b.total = b.l_r;
    } else {
        b.gamma_m = 1.0;
        b.total = b.l_m;
    }

    out.grad.assign(n, 0.0);
    const double cr = nr ? 2.0 * b.gamma_r / static_cast<double>(nr) : 0.0;
    const double cm = nm ? 2.0 * b.gamma_m / static_cast<double>(nm) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (radar_mask[i])
            out.grad[i] = cr * (pred[i] - radar[i]);
        else if (reference_mask[i] && nm)
            out.grad[i] = cm * (pred[i] - reference[i]);
    }
    return out;
}

}  // namespace bedtopo
