#include "bedtopo/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "bedtopo/error.hpp"

namespace bedtopo::nn {

std::string Shape4::str() const {
    return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) +
           ")";
}

Tensor4::Tensor4(Shape4 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count())
        throw DimensionError("tensor payload of " + std::to_string(data_.size()) + " values does not match shape " +
                             shape_.str());
}

bool Tensor4::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace bedtopo::nn
