#include "bedtopo/features.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "bedtopo/binary_io.hpp"
#include "bedtopo/error.hpp"

namespace bedtopo {

namespace {

// Derivative along one axis of a strided line of `n` samples starting at `base`.
void differentiate_line(const ElevationGrid& f, std::size_t base, std::size_t stride, std::size_t n,
                        std::span<double> out, std::span<std::uint8_t> out_valid) {
    const auto v = f.values();
    const auto ok = f.validity();
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t lo = k == 0 ? k : k - 1;
        std::size_t hi = k + 1 == n ? k : k + 1;
        const std::size_t ilo = base + lo * stride;
        const std::size_t ihi = base + hi * stride;
        const std::size_t i = base + k * stride;
        const double span = static_cast<double>(hi - lo);
        out[i] = (v[ihi] - v[ilo]) / span;
        // Interior cells use only their two neighbours; border cells use themselves and one neighbour.
        out_valid[i] = (ok[ilo] && ok[ihi]) ? 1 : 0;
    }
}

}  // namespace

GradientPair compute_gradients(const ElevationGrid& field) {
    const std::size_t rows = field.rows(), cols = field.cols();
    std::vector<double> gx(field.size()), gy(field.size());
    std::vector<std::uint8_t> vx(field.size()), vy(field.size());
    for (std::size_t r = 0; r < rows; ++r) differentiate_line(field, r * cols, 1, cols, gx, vx);
    for (std::size_t c = 0; c < cols; ++c) differentiate_line(field, c, cols, rows, gy, vy);
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (!vx[i]) gx[i] = 0.0;
        if (!vy[i]) gy[i] = 0.0;
    }
    return {ElevationGrid(rows, cols, field.geo(), std::move(gx), std::move(vx)),
            ElevationGrid(rows, cols, field.geo(), std::move(gy), std::move(vy))};
}

double TrendSurfaceModel::evaluate_scaled(double u, double v) const {
    const auto& a = coefficients;
    return a[0] + a[1] * u + a[2] * v + a[3] * u * u + a[4] * u * v + a[5] * v * v;
}

ElevationGrid TrendSurfaceModel::evaluate_on(const ElevationGrid& layout) const {
    auto out = ElevationGrid::filled(layout.rows(), layout.cols(), layout.geo());
    for (std::size_t r = 0; r < layout.rows(); ++r) {
        const double v = scaled_y(layout.cell_center_y(r));
        for (std::size_t c = 0; c < layout.cols(); ++c)
            out.at(r, c) = evaluate_scaled(scaled_x(layout.cell_center_x(c)), v);
    }
    return out;
}

TrendSurfaceModel fit_trend_surface(const ElevationGrid& field) {
    TrendSurfaceModel model;
    model.x_min = field.cell_center_x(0);
    model.x_max = field.cell_center_x(field.cols() - 1);
    model.y_min = field.cell_center_y(0);
    model.y_max = field.cell_center_y(field.rows() - 1);

    const std::size_t n = field.valid_count();
    if (n < TrendSurfaceModel::kCoefficients)
        throw DegenerateFitError("trend surface needs at least 6 valid cells, got " + std::to_string(n));

    Eigen::MatrixXd design(static_cast<Eigen::Index>(n), 6);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
    Eigen::Index k = 0;
    for (std::size_t r = 0; r < field.rows(); ++r) {
        const double v = model.scaled_y(field.cell_center_y(r));
        for (std::size_t c = 0; c < field.cols(); ++c) {
            if (!field.valid(r, c)) continue;
            const double u = model.scaled_x(field.cell_center_x(c));
            design.row(k) << 1.0, u, v, u * u, u * v, v * v;
            rhs(k) = field.at(r, c);
            ++k;
        }
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < 6)
        throw DegenerateFitError("trend surface design is rank deficient (rank " + std::to_string(qr.rank()) +
                                 "); samples are collinear");
    const Eigen::VectorXd coef = qr.solve(rhs);
    for (std::size_t i = 0; i < 6; ++i) model.coefficients[i] = coef(static_cast<Eigen::Index>(i));
    model.residual_sum_squares = (design * coef - rhs).squaredNorm();
    model.sample_count = n;
    return model;
}

std::size_t feature_channel_count(const FeatureToggles& toggles) {
    constexpr std::size_t f = FieldStack::kFieldCount;
    return f + (toggles.gradients ? 2 * f : 0) + (toggles.trends ? f : 0);
}

FeatureTensor build_raw_features(const FieldStack& stack, const FeatureToggles& toggles) {
    FeatureTensor t;
    t.rows = stack.rows();
    t.cols = stack.cols();
    t.geo = stack.geo();
    t.valid.assign(t.plane(), 1);

    std::vector<ElevationGrid> planes;
    auto push = [&](ElevationGrid g, std::string name) {
        auto ok = g.validity();
        for (std::size_t i = 0; i < t.plane(); ++i)
            if (!ok[i]) t.valid[i] = 0;
        planes.push_back(std::move(g));
        t.names.push_back(std::move(name));
    };

    for (std::size_t i = 0; i < FieldStack::kFieldCount; ++i) {
        if (stack.field(i).valid_count() == 0)
            throw std::invalid_argument("field '" + std::string(FieldStack::kNames[i]) + "' has no valid cells");
    }
    for (std::size_t i = 0; i < FieldStack::kFieldCount; ++i) push(stack.field(i), std::string(FieldStack::kNames[i]));
    if (toggles.gradients) {
        for (std::size_t i = 0; i < FieldStack::kFieldCount; ++i) {
            auto g = compute_gradients(stack.field(i));
            const std::string name(FieldStack::kNames[i]);
            push(std::move(g.ddx), "d(" + name + ")/dx");
            push(std::move(g.ddy), "d(" + name + ")/dy");
        }
    }
    if (toggles.trends) {
        for (std::size_t i = 0; i < FieldStack::kFieldCount; ++i) {
            const auto& f = stack.field(i);
            auto trend = fit_trend_surface(f).evaluate_on(f);
            auto ok = trend.validity();
            auto src = f.validity();
            std::copy(src.begin(), src.end(), ok.begin());
            push(std::move(trend), "trend(" + std::string(FieldStack::kNames[i]) + ")");
        }
    }

    t.channels = planes.size();
    t.values.resize(t.channels * t.plane());
    for (std::size_t ch = 0; ch < t.channels; ++ch) {
        auto v = planes[ch].values();
        std::copy(v.begin(), v.end(), t.values.begin() + static_cast<std::ptrdiff_t>(ch * t.plane()));
    }
    t.stats.assign(t.channels, ChannelStats{});
    return t;
}

std::vector<ChannelStats> channel_statistics(const FeatureTensor& raw, std::span<const std::uint8_t> region) {
    if (!region.empty() && region.size() != raw.plane())
        throw DimensionError("normalization region does not match the feature grid");
    auto inside = [&](std::size_t i) { return raw.valid[i] && (region.empty() || region[i]); };

    std::vector<ChannelStats> stats(raw.channels);
    for (std::size_t ch = 0; ch < raw.channels; ++ch) {
        const auto v = raw.channel(ch);
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < raw.plane(); ++i) {
            if (!inside(i)) continue;
            sum += v[i];
            ++n;
        }
        if (n == 0) throw std::invalid_argument("channel '" + raw.names[ch] + "' has no valid cells in the region");
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < raw.plane(); ++i) {
            if (!inside(i)) continue;
            ss += (v[i] - mean) * (v[i] - mean);
        }
        const double sd = std::sqrt(ss / static_cast<double>(n));
        if (!std::isfinite(mean) || !std::isfinite(sd))
            throw NumericalError("channel '" + raw.names[ch] + "' has non-finite statistics");
        stats[ch] = {mean, sd, sd <= 1e-12 * std::max(1.0, std::abs(mean))};
    }
    return stats;
}

void apply_normalization(FeatureTensor& tensor, std::span<const ChannelStats> stats) {
    if (stats.size() != tensor.channels) throw DimensionError("normalization stats do not match channel count");
    for (std::size_t ch = 0; ch < tensor.channels; ++ch) {
        const auto& s = stats[ch];
        double* v = tensor.values.data() + ch * tensor.plane();
        for (std::size_t i = 0; i < tensor.plane(); ++i) {
            if (!tensor.valid[i] || s.constant)
                v[i] = 0.0;
            else
                v[i] = (v[i] - s.mean) / s.stddev;
        }
    }
    tensor.stats.assign(stats.begin(), stats.end());
}

FeatureTensor build_feature_tensor(const FieldStack& stack, const FeatureToggles& toggles,
                                   std::span<const std::uint8_t> region) {
    auto t = build_raw_features(stack, toggles);
    const auto stats = channel_statistics(t, region);
    apply_normalization(t, stats);
    return t;
}

namespace {
constexpr std::string_view kFeatureMagic = "BTF1";
}

std::vector<std::uint8_t> encode_features(const FeatureTensor& t) {
    io::ByteWriter w;
    w.magic(kFeatureMagic);
    w.u32(static_cast<std::uint32_t>(t.channels));
    w.u32(static_cast<std::uint32_t>(t.rows));
    w.u32(static_cast<std::uint32_t>(t.cols));
    w.f64(t.geo.x0);
    w.f64(t.geo.y0);
    w.f64(t.geo.dx);
    w.f64(t.geo.dy);
    for (std::size_t ch = 0; ch < t.channels; ++ch) {
        w.u32(static_cast<std::uint32_t>(t.names[ch].size()));
        w.bytes(t.names[ch]);
        w.f64(t.stats[ch].mean);
        w.f64(t.stats[ch].stddev);
        w.u8(t.stats[ch].constant ? 1 : 0);
    }
    for (double v : t.values) w.f64(v);
    for (auto v : t.valid) w.u8(v ? 1 : 0);
    return w.data();
}

FeatureTensor decode_features(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    r.expect_magic(kFeatureMagic, "BTF1 features");
    FeatureTensor t;
    t.channels = r.u32();
    t.rows = r.u32();
    t.cols = r.u32();
    t.geo.x0 = r.f64();
    t.geo.y0 = r.f64();
    t.geo.dx = r.f64();
    t.geo.dy = r.f64();
    if (t.channels == 0 || t.rows < 2 || t.cols < 2) throw FormatError("BTF1 features: invalid dimensions");
    for (std::size_t ch = 0; ch < t.channels; ++ch) {
        const std::size_t len = r.u32();
        t.names.push_back(r.bytes(len));
        ChannelStats s;
        s.mean = r.f64();
        s.stddev = r.f64();
        const auto flag = r.u8();
        if (flag > 1) throw FormatError("BTF1 features: constant flag must be 0 or 1");
        s.constant = flag == 1;
        t.stats.push_back(s);
    }
    const std::size_t n = t.channels * t.plane();
    if (r.remaining() != n * 8 + t.plane())
        throw TruncationError("BTF1 features: payload size does not match header");
    t.values.resize(n);
    for (auto& v : t.values) v = r.f64();
    t.valid.resize(t.plane());
    for (auto& v : t.valid) {
        v = r.u8();
        if (v > 1) throw FormatError("BTF1 features: validity flag must be 0 or 1");
    }
    return t;
}

void write_features(const std::filesystem::path& path, const FeatureTensor& tensor) {
    io::write_file(path, encode_features(tensor));
}

FeatureTensor read_features(const std::filesystem::path& path) { return decode_features(io::read_file(path)); }

}  // namespace bedtopo
