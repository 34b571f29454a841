#include "bedtopo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "bedtopo/baselines.hpp"
#include "bedtopo/error.hpp"
#include "bedtopo/features.hpp"

namespace bedtopo {

namespace {

using Field = std::vector<double>;

std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
    if (n == 1) return 0;
    const std::ptrdiff_t period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

Field white_noise(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Field f(n);
    for (auto& v : f) v = normal(rng);
    return f;
}

void scale_to_max_abs(Field& f, double target) {
    double m = 0.0;
    for (double v : f) m = std::max(m, std::abs(v));
    if (m > 0.0)
        for (auto& v : f) v *= target / m;
}

void scale_to_std(Field& f, double target) {
    double mean = 0.0;
    for (double v : f) mean += v;
    mean /= static_cast<double>(f.size());
    double var = 0.0;
    for (double v : f) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(f.size()));
    for (auto& v : f) v = sd > 0.0 ? (v - mean) * target / sd : 0.0;
}

// Smooth random field with unit maximum magnitude.
Field smooth_field(std::size_t rows, std::size_t cols, double sigma, std::mt19937_64& rng) {
    auto f = gaussian_blur(white_noise(rows * cols, rng), rows, cols, sigma);
    scale_to_max_abs(f, 1.0);
    return f;
}

ElevationGrid as_grid(const SynthParams& p, Field values) {
    const GeoTransform geo{0.0, 0.0, p.cell_size, p.cell_size};
    return ElevationGrid(p.rows, p.cols, geo, std::move(values), std::vector<std::uint8_t>(p.rows * p.cols, 1));
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

ElevationGrid divergence(const ElevationGrid& thickness, const ElevationGrid& vx, const ElevationGrid& vy) {
    const std::size_t n = thickness.size();
    Field qx(n), qy(n);
    for (std::size_t i = 0; i < n; ++i) {
        qx[i] = thickness.values()[i] * vx.values()[i];
        qy[i] = thickness.values()[i] * vy.values()[i];
    }
    const auto& geo = thickness.geo();
    std::vector<std::uint8_t> ok(n, 1);
    const auto gx = compute_gradients(ElevationGrid(thickness.rows(), thickness.cols(), geo, std::move(qx), ok));
    const auto gy = compute_gradients(ElevationGrid(thickness.rows(), thickness.cols(), geo, std::move(qy), ok));
    Field div(n);
    for (std::size_t i = 0; i < n; ++i) div[i] = gx.ddx.values()[i] / geo.dx + gy.ddy.values()[i] / geo.dy;
    return ElevationGrid(thickness.rows(), thickness.cols(), geo, std::move(div), std::move(ok));
}

struct Line {
    double x0, y0, x1, y1;  // grid units
};

// Parallel lines at `angle`, evenly spaced across the grid, clipped slightly inside it.
std::vector<Line> flight_lines(std::size_t count, double angle_deg, std::size_t rows, std::size_t cols) {
    std::vector<Line> out;
    if (count == 0) return out;
    const double th = angle_deg * std::numbers::pi / 180.0;
    const double dx = std::cos(th), dy = std::sin(th);
    const double nx = -dy, ny = dx;
    const double W = static_cast<double>(cols), H = static_cast<double>(rows);
    const double inset = 1e-7;
    double pmin = std::numeric_limits<double>::infinity(), pmax = -pmin;
    for (double cx : {0.0, W})
        for (double cy : {0.0, H}) {
            pmin = std::min(pmin, cx * nx + cy * ny);
            pmax = std::max(pmax, cx * nx + cy * ny);
        }
    for (std::size_t i = 0; i < count; ++i) {
        const double p = pmin + (static_cast<double>(i) + 0.5) * (pmax - pmin) / static_cast<double>(count);
        const double ox = p * nx, oy = p * ny;
        // Liang-Barsky clip of ox + t*d against [inset, W - inset] x [inset, H - inset].
        double t0 = -1e18, t1 = 1e18;
        auto clip = [&](double o, double d, double lo, double hi) {
            if (std::abs(d) < 1e-15) {
                if (o < lo || o > hi) t0 = 1.0, t1 = 0.0;
                return;
            }
            double a = (lo - o) / d, b = (hi - o) / d;
            if (a > b) std::swap(a, b);
            t0 = std::max(t0, a);
            t1 = std::min(t1, b);
        };
        clip(ox, dx, inset, W - inset);
        clip(oy, dy, inset, H - inset);
        if (t1 <= t0) continue;
        out.push_back({ox + t0 * dx, oy + t0 * dy, ox + t1 * dx, oy + t1 * dy});
    }
    return out;
}

// Midpoint of the segment's passage through each traversed cell.
std::vector<std::pair<double, double>> cell_midpoints(const Line& l, std::span<const CellIndex> cells) {
    std::vector<std::pair<double, double>> out;
    const double dx = l.x1 - l.x0, dy = l.y1 - l.y0;
    for (const auto& c : cells) {
        double t0 = 0.0, t1 = 1.0;
        auto clip = [&](double o, double d, double lo, double hi) {
            if (std::abs(d) < 1e-15) return;
            double a = (lo - o) / d, b = (hi - o) / d;
            if (a > b) std::swap(a, b);
            t0 = std::max(t0, a);
            t1 = std::min(t1, b);
        };
        clip(l.x0, dx, static_cast<double>(c.col), static_cast<double>(c.col + 1));
        clip(l.y0, dy, static_cast<double>(c.row), static_cast<double>(c.row + 1));
        const double t = 0.5 * (t0 + t1);
        out.emplace_back(l.x0 + t * dx, l.y0 + t * dy);
    }
    return out;
}

std::size_t floor_cell(double v, std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(std::max(0.0, std::floor(v))));
}

}  // namespace

void SynthParams::validate() const {
    if (rows < 64 || cols < 64) throw ConfigError("synthetic grids must be at least 64x64");
    if (!(cell_size > 0.0)) throw ConfigError("cell_size must be positive");
    if (!(bump_amplitude_min >= 0.0 && bump_amplitude_min <= bump_amplitude_max))
        throw ConfigError("bump amplitudes must satisfy 0 <= min <= max");
    if (!(bump_sigma_min > 0.0 && bump_sigma_min <= bump_sigma_max))
        throw ConfigError("bump sigmas must satisfy 0 < min <= max");
    if (!(trough_width > 0.0)) throw ConfigError("trough_width must be positive");
    if (!(thickness_mean > 0.0) || !(thickness_variation >= 0.0) || !(thickness_scale > 0.0))
        throw ConfigError("thickness parameters must be positive");
    if (!(roughness >= 0.0) || !(roughness_scale > 0.0)) throw ConfigError("roughness parameters must be non-negative");
    if (!(speed > 0.0) || !(speed_trough_gain >= 1.0)) throw ConfigError("speed must be positive and the trough gain >= 1");
    if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
    if (!(reference_smoothing >= 0.0) || !(reference_error >= 0.0) || !(reference_error_scale > 0.0) ||
        !(reference_line_falloff > 0.0))
        throw ConfigError("reference parameters must be non-negative");
    if (std::abs(line_angle_deg) >= 90.0) throw ConfigError("line_angle_deg must lie in (-90, 90)");
}

ElevationGrid Scenario::thickness() const {
    Field h(true_bed.size());
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = stack.surface().values()[i] - true_bed.values()[i];
    return ElevationGrid(true_bed.rows(), true_bed.cols(), true_bed.geo(), std::move(h),
                         std::vector<std::uint8_t>(h.size(), 1));
}

std::vector<double> gaussian_blur(const std::vector<double>& values, std::size_t rows, std::size_t cols, double sigma) {
    if (values.size() != rows * cols) throw DimensionError("blur input does not match its shape");
    if (sigma <= 0.0) return values;
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        w[static_cast<std::size_t>(k + radius)] = std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
        total += w[static_cast<std::size_t>(k + radius)];
    }
    for (auto& v : w) v /= total;
    const auto R = static_cast<std::ptrdiff_t>(rows), C = static_cast<std::ptrdiff_t>(cols);
    std::vector<double> tmp(values.size()), out(values.size());
    for (std::ptrdiff_t r = 0; r < R; ++r)
        for (std::ptrdiff_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::ptrdiff_t k = -radius; k <= radius; ++k)
                s += w[static_cast<std::size_t>(k + radius)] * values[static_cast<std::size_t>(r * C + reflect(c + k, C))];
            tmp[static_cast<std::size_t>(r * C + c)] = s;
        }
    for (std::ptrdiff_t r = 0; r < R; ++r)
        for (std::ptrdiff_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::ptrdiff_t k = -radius; k <= radius; ++k)
                s += w[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(reflect(r + k, R) * C + c)];
            out[static_cast<std::size_t>(r * C + c)] = s;
        }
    return out;
}

std::vector<CellIndex> traverse_segment(double x0, double y0, double x1, double y1, std::size_t rows,
                                        std::size_t cols) {
    std::vector<CellIndex> cells;
    if (rows == 0 || cols == 0) return cells;
    auto cx = static_cast<std::ptrdiff_t>(floor_cell(x0, cols));
    auto cy = static_cast<std::ptrdiff_t>(floor_cell(y0, rows));
    const auto ex = static_cast<std::ptrdiff_t>(floor_cell(x1, cols));
    const auto ey = static_cast<std::ptrdiff_t>(floor_cell(y1, rows));
    const double dx = x1 - x0, dy = y1 - y0;
    const std::ptrdiff_t sx = dx > 0 ? 1 : (dx < 0 ? -1 : 0), sy = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
    constexpr double inf = std::numeric_limits<double>::infinity();
    const double tdx = sx ? std::abs(1.0 / dx) : inf, tdy = sy ? std::abs(1.0 / dy) : inf;
    double tmx = sx > 0 ? (static_cast<double>(cx + 1) - x0) / dx : (sx < 0 ? (static_cast<double>(cx) - x0) / dx : inf);
    double tmy = sy > 0 ? (static_cast<double>(cy + 1) - y0) / dy : (sy < 0 ? (static_cast<double>(cy) - y0) / dy : inf);
    const auto steps = std::abs(ex - cx) + std::abs(ey - cy);
    cells.push_back({static_cast<std::size_t>(cy), static_cast<std::size_t>(cx)});
    for (std::ptrdiff_t s = 0; s < steps; ++s) {
        if (tmx < tmy) {
            cx += sx;
            tmx += tdx;
        } else {
            cy += sy;
            tmy += tdy;
        }
        if (cx < 0 || cy < 0 || cx >= static_cast<std::ptrdiff_t>(cols) || cy >= static_cast<std::ptrdiff_t>(rows)) break;
        cells.push_back({static_cast<std::size_t>(cy), static_cast<std::size_t>(cx)});
    }
    return cells;
}

double mass_conservation_residual(const ElevationGrid& thickness, const ElevationGrid& vx, const ElevationGrid& vy,
                                  const ElevationGrid& adot) {
    if (!thickness.same_layout(vx) || !thickness.same_layout(vy) || !thickness.same_layout(adot))
        throw DimensionError("mass-conservation fields differ in layout");
    const auto div = divergence(thickness, vx, vy);
    double worst = 0.0;
    for (std::size_t r = 1; r + 1 < thickness.rows(); ++r)
        for (std::size_t c = 1; c + 1 < thickness.cols(); ++c)
            worst = std::max(worst, std::abs(div.at(r, c) - adot.at(r, c)));
    return worst;
}

Scenario generate_scenario(const SynthParams& params, std::uint64_t seed) {
    params.validate();
    const std::size_t R = params.rows, C = params.cols, N = R * C;
    std::mt19937_64 rng(seed);

    // Bed: regional slope, a meandering trough, compact bumps and fine roughness.
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double trough_row = uniform(rng, 0.4, 0.6) * static_cast<double>(R);
    auto trough_center = [&](double c) {
        return trough_row + params.trough_meander * std::sin(2.0 * std::numbers::pi * c / static_cast<double>(C) + phase);
    };
    Field bed(N);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
            const double d = static_cast<double>(r) - trough_center(static_cast<double>(c));
            bed[r * C + c] = params.base_elevation + params.regional_slope * static_cast<double>(c) -
                             params.trough_depth * std::exp(-d * d / (2.0 * params.trough_width * params.trough_width));
        }
    for (std::size_t b = 0; b < params.bumps; ++b) {
        const double br = uniform(rng, 0.0, static_cast<double>(R)), bc = uniform(rng, 0.0, static_cast<double>(C));
        const double amp = uniform(rng, params.bump_amplitude_min, params.bump_amplitude_max) * ((rng() & 1) ? 1.0 : -1.0);
        const double sig = uniform(rng, params.bump_sigma_min, params.bump_sigma_max);
        const auto reach = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sig));
        for (std::ptrdiff_t r = static_cast<std::ptrdiff_t>(br) - reach; r <= static_cast<std::ptrdiff_t>(br) + reach; ++r)
            for (std::ptrdiff_t c = static_cast<std::ptrdiff_t>(bc) - reach; c <= static_cast<std::ptrdiff_t>(bc) + reach; ++c) {
                if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(R) || c >= static_cast<std::ptrdiff_t>(C)) continue;
                const double dr = static_cast<double>(r) + 0.5 - br, dc = static_cast<double>(c) + 0.5 - bc;
                bed[static_cast<std::size_t>(r) * C + static_cast<std::size_t>(c)] +=
                    amp * std::exp(-(dr * dr + dc * dc) / (2.0 * sig * sig));
            }
    }
    if (params.roughness > 0.0) {
        auto rough = gaussian_blur(white_noise(N, rng), R, C, params.roughness_scale);
        scale_to_std(rough, params.roughness);
        for (std::size_t i = 0; i < N; ++i) bed[i] += rough[i];
    }

    // Thickness: smooth and positive; each retry halves the variation.
    Field thick(N);
    const auto thick_shape = smooth_field(R, C, params.thickness_scale, rng);
    std::size_t attempts = 0;
    double variation = params.thickness_variation;
    for (;;) {
        ++attempts;
        double lo = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < N; ++i) {
            thick[i] = params.thickness_mean + variation * thick_shape[i];
            lo = std::min(lo, thick[i]);
        }
        if (lo > 0.0) break;
        if (attempts > params.max_retries)
            throw NumericalError("synthetic thickness stays non-positive after " + std::to_string(attempts) +
                                 " attempts; raise thickness_mean or lower thickness_variation");
        variation *= 0.5;
    }
    Field surface(N);
    for (std::size_t i = 0; i < N; ++i) surface[i] = bed[i] + thick[i];

    // Velocity: fast flow along the trough plus a stream-function perturbation.
    const auto psi = smooth_field(R, C, params.thickness_scale, rng);
    Field vx(N), vy(N), speed(N);
    double max_grad = 0.0;
    Field px(N), py(N);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t cl = c > 0 ? c - 1 : c, cr = c + 1 < C ? c + 1 : c;
            const std::size_t ru = r > 0 ? r - 1 : r, rd = r + 1 < R ? r + 1 : r;
            const double dpdx = (psi[r * C + cr] - psi[r * C + cl]) / static_cast<double>(cr - cl);
            const double dpdy = (psi[rd * C + c] - psi[ru * C + c]) / static_cast<double>(rd - ru);
            px[r * C + c] = dpdy;
            py[r * C + c] = -dpdx;
            max_grad = std::max(max_grad, std::hypot(dpdx, dpdy));
        }
    const double w_fast = 1.5 * params.trough_width;
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
            const double cc = static_cast<double>(c);
            const double d = static_cast<double>(r) - trough_center(cc);
            const double tau = std::exp(-d * d / (2.0 * w_fast * w_fast));
            const double u = params.speed * (1.0 + (params.speed_trough_gain - 1.0) * tau);
            const double slope = params.trough_meander * 2.0 * std::numbers::pi / static_cast<double>(C) *
                                 std::cos(2.0 * std::numbers::pi * cc / static_cast<double>(C) + phase);
            const double norm = std::hypot(1.0, slope);
            const double k = max_grad > 0.0 ? params.flow_perturbation * params.speed / max_grad : 0.0;
            const auto i = r * C + c;
            vx[i] = u / norm + k * px[i];
            vy[i] = u * slope / norm + k * py[i];
            speed[i] = u;
        }

    auto bed_grid = as_grid(params, bed);
    auto surface_grid = as_grid(params, surface);
    auto vx_grid = as_grid(params, vx);
    auto vy_grid = as_grid(params, vy);
    Field h_rec(N);
    for (std::size_t i = 0; i < N; ++i) h_rec[i] = surface[i] - bed[i];
    const auto thickness_grid = as_grid(params, h_rec);
    auto adot = divergence(thickness_grid, vx_grid, vy_grid);

    // Thinning where ice flows fast; SMB closes the balance adot = smb - dh/dt.
    const auto dh_noise = smooth_field(R, C, params.thickness_scale, rng);
    const double max_speed = *std::max_element(speed.begin(), speed.end());
    Field dhdt(N), smb(N);
    for (std::size_t i = 0; i < N; ++i) {
        dhdt[i] = params.dhdt_amplitude * (-speed[i] / max_speed + 0.3 * dh_noise[i]);
        smb[i] = adot.values()[i] + dhdt[i];
    }

    // Flight lines.
    const auto lines = flight_lines(params.flight_lines, params.line_angle_deg, R, C);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<ObservationPoint> points;
    std::size_t expected = 0;
    for (const auto& l : lines) {
        const auto cells = traverse_segment(l.x0, l.y0, l.x1, l.y1, R, C);
        expected += static_cast<std::size_t>(
                        std::abs(static_cast<std::ptrdiff_t>(floor_cell(l.x1, C)) -
                                 static_cast<std::ptrdiff_t>(floor_cell(l.x0, C))) +
                        std::abs(static_cast<std::ptrdiff_t>(floor_cell(l.y1, R)) -
                                 static_cast<std::ptrdiff_t>(floor_cell(l.y0, R)))) +
                    1;
        const auto mids = cell_midpoints(l, cells);
        for (std::size_t k = 0; k < cells.size(); ++k) {
            const auto& cell = cells[k];
            double x = mids[k].first * params.cell_size, y = mids[k].second * params.cell_size;
            const auto hit = bed_grid.locate(x, y);
            if (!hit || !(*hit == cell)) {
                x = bed_grid.cell_center_x(cell.col);
                y = bed_grid.cell_center_y(cell.row);
            }
            double v = bed_grid.at(cell.row, cell.col);
            if (params.noise_std > 0.0) v += params.noise_std * noise(rng);
            points.push_back({x, y, v});
        }
    }
    auto obs = rasterize_points(points, bed_grid);

    // Reference product: low-passed bed, pulled towards nearby line data, with a smooth error
    // that fades close to the lines.
    const auto low = gaussian_blur(bed, R, C, params.reference_smoothing);
    auto err = smooth_field(R, C, params.reference_error_scale, rng);
    for (auto& v : err) v *= params.reference_error;
    Field ref(N);
    std::vector<ObservationPoint> radar_cells;
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c)
            if (obs.mask[r * C + c])
                radar_cells.push_back({static_cast<double>(c), static_cast<double>(r), static_cast<double>(r * C + c)});
    if (radar_cells.empty()) {
        for (std::size_t i = 0; i < N; ++i) ref[i] = low[i] + err[i];
    } else {
        const KnnIndex index(radar_cells);
        const double f2 = 2.0 * params.reference_line_falloff * params.reference_line_falloff;
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) {
                const auto nn = index.query(static_cast<double>(c), static_cast<double>(r), 1,
                                            std::numeric_limits<double>::infinity());
                const auto& p = radar_cells[nn.front()];
                const double d2 = (p.x - static_cast<double>(c)) * (p.x - static_cast<double>(c)) +
                                  (p.y - static_cast<double>(r)) * (p.y - static_cast<double>(r));
                const double near = std::exp(-d2 / f2);
                const auto j = static_cast<std::size_t>(p.bed);
                const auto i = r * C + c;
                ref[i] = low[i] + 0.8 * near * (obs.values[j] - low[j]) + (1.0 - near) * err[i];
            }
    }
    auto ref_grid = as_grid(params, ref);

    Scenario s{params,
               seed,
               bed_grid,
               FieldStack(surface_grid, vx_grid, vy_grid, as_grid(params, dhdt), as_grid(params, smb)),
               adot,
               obs,
               ReferenceGrid(ref_grid, obs),
               0.0,
               expected,
               attempts};
    s.mass_residual = mass_conservation_residual(s.thickness(), s.stack.vx(), s.stack.vy(), s.apparent_mass_balance);
    return s;
}

// Parameter manifest -------------------------------------------------------------------------

namespace {

struct ParamField {
    const char* name;
    std::function<nlohmann::json(const SynthParams&)> get;
    std::function<void(SynthParams&, const nlohmann::json&)> set;
};

template <typename T>
ParamField field(const char* name, T SynthParams::*member) {
    return {name, [member](const SynthParams& p) { return nlohmann::json(p.*member); },
            [member, name](SynthParams& p, const nlohmann::json& j) {
                if constexpr (std::is_same_v<T, std::size_t>) {
                    if (!j.is_number_unsigned()) throw ConfigError(std::string("'") + name + "' must be a non-negative integer");
                } else {
                    if (!j.is_number()) throw ConfigError(std::string("'") + name + "' must be a number");
                }
                p.*member = j.get<T>();
            }};
}

const std::vector<ParamField>& param_fields() {
    static const std::vector<ParamField> fields{
        field("rows", &SynthParams::rows),
        field("cols", &SynthParams::cols),
        field("cell_size", &SynthParams::cell_size),
        field("base_elevation", &SynthParams::base_elevation),
        field("regional_slope", &SynthParams::regional_slope),
        field("bumps", &SynthParams::bumps),
        field("bump_amplitude_min", &SynthParams::bump_amplitude_min),
        field("bump_amplitude_max", &SynthParams::bump_amplitude_max),
        field("bump_sigma_min", &SynthParams::bump_sigma_min),
        field("bump_sigma_max", &SynthParams::bump_sigma_max),
        field("trough_depth", &SynthParams::trough_depth),
        field("trough_width", &SynthParams::trough_width),
        field("trough_meander", &SynthParams::trough_meander),
        field("roughness", &SynthParams::roughness),
        field("roughness_scale", &SynthParams::roughness_scale),
        field("thickness_mean", &SynthParams::thickness_mean),
        field("thickness_variation", &SynthParams::thickness_variation),
        field("thickness_scale", &SynthParams::thickness_scale),
        field("speed", &SynthParams::speed),
        field("speed_trough_gain", &SynthParams::speed_trough_gain),
        field("flow_perturbation", &SynthParams::flow_perturbation),
        field("dhdt_amplitude", &SynthParams::dhdt_amplitude),
        field("flight_lines", &SynthParams::flight_lines),
        field("line_angle_deg", &SynthParams::line_angle_deg),
        field("noise_std", &SynthParams::noise_std),
        field("reference_smoothing", &SynthParams::reference_smoothing),
        field("reference_error", &SynthParams::reference_error),
        field("reference_error_scale", &SynthParams::reference_error_scale),
        field("reference_line_falloff", &SynthParams::reference_line_falloff),
        field("max_retries", &SynthParams::max_retries),
    };
    return fields;
}

nlohmann::json params_to_json(const SynthParams& p) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : param_fields()) j[f.name] = f.get(p);
    return j;
}

SynthParams params_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("synthetic parameters must be a JSON object");
    SynthParams p;
    std::vector<std::string> unknown;
    for (const auto& [key, value] : j.items()) {
        const auto& fields = param_fields();
        const auto it = std::find_if(fields.begin(), fields.end(), [&](const ParamField& f) { return key == f.name; });
        if (it == fields.end())
            unknown.push_back(key);
        else
            it->set(p, value);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown synthetic parameter(s):";
        for (const auto& k : unknown) msg += " '" + k + "'";
        throw ConfigError(msg);
    }
    return p;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string synth_params_json(const SynthParams& params) { return params_to_json(params).dump(2); }

SynthParams synth_params_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
    return params_from_json(j);
}

void save_scenario(const std::filesystem::path& dir, const Scenario& s) {
    std::filesystem::create_directories(dir);
    write_grid(dir / "true_bed.btg", s.true_bed);
    for (std::size_t i = 0; i < FieldStack::kFieldCount; ++i)
        write_grid(dir / (std::string(FieldStack::kNames[i]) + ".btg"), s.stack.field(i));
    write_grid(dir / "adot.btg", s.apparent_mass_balance);
    write_grid(dir / "reference.btg", s.reference.grid());
    write_observations_csv(dir / "observations.csv", s.observations.points);

    nlohmann::json j;
    j["seed"] = s.seed;
    j["params"] = params_to_json(s.params);
    j["mass_residual"] = s.mass_residual;
    j["expected_radar_cells"] = s.expected_radar_cells;
    j["radar_cells"] = s.observations.masked_count();
    j["observation_points"] = s.observations.points.size();
    j["attempts"] = s.attempts;
    std::ofstream out(dir / "scenario.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "scenario.json").string());
    out << j.dump(2) << '\n';
}

Scenario load_scenario(const std::filesystem::path& dir) {
    const auto manifest = dir / "scenario.json";
    if (!std::filesystem::exists(manifest)) throw std::runtime_error("scenario manifest not found: " + manifest.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(manifest));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("invalid scenario manifest " + manifest.string() + ": " + e.what());
    }
    auto bed = read_grid(dir / "true_bed.btg");
    std::vector<ElevationGrid> f;
    for (std::size_t i = 0; i < FieldStack::kFieldCount; ++i)
        f.push_back(read_grid(dir / (std::string(FieldStack::kNames[i]) + ".btg")));
    auto adot = read_grid(dir / "adot.btg");
    auto ref = read_grid(dir / "reference.btg");
    const auto points = read_observations_csv(dir / "observations.csv");
    auto obs = rasterize_points(points, bed);
    Scenario s{params_from_json(j.at("params")),
               j.at("seed").get<std::uint64_t>(),
               bed,
               FieldStack(f[0], f[1], f[2], f[3], f[4]),
               adot,
               obs,
               ReferenceGrid(ref, obs),
               j.value("mass_residual", 0.0),
               j.value("expected_radar_cells", std::size_t{0}),
               j.value("attempts", std::size_t{1})};
    return s;
}

}  // namespace bedtopo
