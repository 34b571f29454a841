#include "bedtopo/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include <Eigen/Dense>

#include "bedtopo/error.hpp"

namespace bedtopo {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Candidate {
    double d2;
    std::size_t index;
};

ElevationGrid assemble(const ElevationGrid& layout, std::span<const CellIndex> cells, std::span<const double> values) {
    std::vector<double> v(layout.size(), 0.0);
    std::vector<std::uint8_t> ok(layout.size(), 0);
    for (std::size_t k = 0; k < cells.size(); ++k) {
        if (std::isnan(values[k])) continue;
        const auto i = cells[k].row * layout.cols() + cells[k].col;
        v[i] = values[k];
        ok[i] = 1;
    }
    return ElevationGrid(layout.rows(), layout.cols(), layout.geo(), std::move(v), std::move(ok));
}

std::vector<CellIndex> target_cells(const ElevationGrid& layout, std::span<const CellIndex> targets) {
    if (!targets.empty()) {
        for (const auto& t : targets)
            if (t.row >= layout.rows() || t.col >= layout.cols()) throw DimensionError("target cell outside the grid");
        return {targets.begin(), targets.end()};
    }
    std::vector<CellIndex> all;
    all.reserve(layout.size());
    for (std::size_t r = 0; r < layout.rows(); ++r)
        for (std::size_t c = 0; c < layout.cols(); ++c) all.push_back({r, c});
    return all;
}

void check_layout(const ObservationSet& obs, const ElevationGrid& layout) {
    if (obs.rows != layout.rows() || obs.cols != layout.cols())
        throw DimensionError("observation raster does not match the target layout");
}

}  // namespace

std::vector<ObservationPoint> cell_observations(const ObservationSet& obs) {
    std::vector<ObservationPoint> out;
    for (std::size_t r = 0; r < obs.rows; ++r)
        for (std::size_t c = 0; c < obs.cols; ++c) {
            const auto i = r * obs.cols + c;
            if (!obs.mask[i]) continue;
            out.push_back({obs.geo.x0 + (static_cast<double>(c) + 0.5) * obs.geo.dx,
                           obs.geo.y0 + (static_cast<double>(r) + 0.5) * obs.geo.dy, obs.values[i]});
        }
    return out;
}

KnnIndex::KnnIndex(std::span<const ObservationPoint> points) : pts_(points.begin(), points.end()) {
    if (pts_.empty()) throw std::invalid_argument("nearest-neighbor index needs at least one point");
    double xmin = pts_[0].x, xmax = xmin, ymin = pts_[0].y, ymax = ymin;
    for (const auto& p : pts_) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw std::invalid_argument("observation with non-finite coordinates");
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    const double w = std::max(xmax - xmin, 1e-9), h = std::max(ymax - ymin, 1e-9);
    // About four points per bucket.
    cell_ = std::max(std::sqrt(w * h * 4.0 / static_cast<double>(pts_.size())), std::max(w, h) / 4096.0);
    nx_ = static_cast<std::size_t>(w / cell_) + 1;
    ny_ = static_cast<std::size_t>(h / cell_) + 1;
    x0_ = xmin;
    y0_ = ymin;

    std::vector<std::size_t> bucket(pts_.size());
    start_.assign(nx_ * ny_ + 1, 0);
    for (std::size_t i = 0; i < pts_.size(); ++i) {
        const auto bx = std::min(nx_ - 1, static_cast<std::size_t>((pts_[i].x - x0_) / cell_));
        const auto by = std::min(ny_ - 1, static_cast<std::size_t>((pts_[i].y - y0_) / cell_));
        bucket[i] = by * nx_ + bx;
        ++start_[bucket[i] + 1];
    }
    std::partial_sum(start_.begin(), start_.end(), start_.begin());
    items_.resize(pts_.size());
    auto fill = start_;
    for (std::size_t i = 0; i < pts_.size(); ++i) items_[fill[bucket[i]]++] = i;
}

std::vector<std::size_t> KnnIndex::query(double x, double y, std::size_t k, double max_distance) const {
    if (k == 0) return {};
    const double max_d2 = max_distance * max_distance;
    const auto clampi = [](double v, std::size_t n) {
        if (v < 0.0) return std::ptrdiff_t{-1};
        if (v >= static_cast<double>(n)) return static_cast<std::ptrdiff_t>(n);
        return static_cast<std::ptrdiff_t>(v);
    };
    // Bucket coordinates of the query; may lie one step outside the grid.
    const std::ptrdiff_t qx = clampi((x - x0_) / cell_, nx_), qy = clampi((y - y0_) / cell_, ny_);
    const auto nx = static_cast<std::ptrdiff_t>(nx_), ny = static_cast<std::ptrdiff_t>(ny_);

    std::vector<Candidate> found;
    auto visit = [&](std::ptrdiff_t bx, std::ptrdiff_t by) {
        if (bx < 0 || by < 0 || bx >= nx || by >= ny) return;
        const auto b = static_cast<std::size_t>(by * nx + bx);
        for (std::size_t j = start_[b]; j < start_[b + 1]; ++j) {
            const auto& p = pts_[items_[j]];
            const double d2 = (p.x - x) * (p.x - x) + (p.y - y) * (p.y - y);
            if (d2 <= max_d2) found.push_back({d2, items_[j]});
        }
    };
    auto less = [&](const Candidate& a, const Candidate& b) {
        const auto& pa = pts_[a.index];
        const auto& pb = pts_[b.index];
        return std::tie(a.d2, pa.y, pa.x, pa.bed, a.index) < std::tie(b.d2, pb.y, pb.x, pb.bed, b.index);
    };

    const std::ptrdiff_t max_ring = std::max({qx + 1, nx - qx, qy + 1, ny - qy});
    for (std::ptrdiff_t R = 0; R <= max_ring; ++R) {
        if (R == 0) {
            visit(qx, qy);
        } else {
            // only the part of the ring that overlaps the bucket grid
            const std::ptrdiff_t bx0 = std::max<std::ptrdiff_t>(qx - R, 0), bx1 = std::min(qx + R, nx - 1);
            const std::ptrdiff_t by0 = std::max<std::ptrdiff_t>(qy - R + 1, 0), by1 = std::min(qy + R - 1, ny - 1);
            for (std::ptrdiff_t bx = bx0; bx <= bx1; ++bx) {
                visit(bx, qy - R);
                visit(bx, qy + R);
            }
            for (std::ptrdiff_t by = by0; by <= by1; ++by) {
                visit(qx - R, by);
                visit(qx + R, by);
            }
        }
        // Every unvisited point lies outside the square of buckets [q - R, q + R].
        const double lx = x0_ + static_cast<double>(qx - R) * cell_, hx = x0_ + static_cast<double>(qx + R + 1) * cell_;
        const double ly = y0_ + static_cast<double>(qy - R) * cell_, hy = y0_ + static_cast<double>(qy + R + 1) * cell_;
        const double bound = std::max(0.0, std::min({x - lx, hx - x, y - ly, hy - y}));
        const double b2 = bound * bound;
        if (b2 > max_d2) break;
        if (found.size() >= k) {
            std::nth_element(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k - 1), found.end(), less);
            if (found[k - 1].d2 < b2) break;
        }
    }
    std::sort(found.begin(), found.end(), less);
    if (found.size() > k) found.resize(k);
    std::vector<std::size_t> out;
    out.reserve(found.size());
    for (const auto& c : found) out.push_back(c.index);
    return out;
}

void IdwConfig::validate() const {
    if (k == 0) throw ConfigError("IDW neighbor count k must be at least 1");
    if (!(power > 0.0)) throw ConfigError("IDW power must be positive");
    if (!(threshold > 0.0)) throw ConfigError("IDW distance threshold must be positive");
}

std::vector<double> idw_at(const KnnIndex& index, std::span<const Point2> targets, const IdwConfig& cfg) {
    cfg.validate();
    const auto& pts = index.points();
    std::vector<double> out(targets.size(), kNaN);
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const auto nb = index.query(targets[t].x, targets[t].y, cfg.k, cfg.threshold);
        if (nb.empty()) continue;
        double num = 0.0, den = 0.0;
        bool hit = false;
        for (auto i : nb) {
            const double d = std::hypot(pts[i].x - targets[t].x, pts[i].y - targets[t].y);
            if (d == 0.0) {
                out[t] = pts[i].bed;
                hit = true;
                break;
            }
            const double w = cfg.power == 2.0 ? 1.0 / (d * d) : std::pow(d, -cfg.power);
            num += w * pts[i].bed;
            den += w;
        }
        if (!hit) out[t] = num / den;
    }
    return out;
}

void RbfConfig::validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("RBF shape parameter epsilon must be positive");
    if (!(ridge >= 0.0)) throw ConfigError("RBF ridge must be non-negative");
}

double multiquadric(double r, double epsilon) {
    const double q = r / epsilon;
    return std::sqrt(q * q + 1.0);
}

std::vector<ObservationPoint> select_centers(std::span<const ObservationPoint> points, const RbfConfig& cfg) {
    std::map<std::pair<double, double>, std::pair<double, std::size_t>> merged;
    for (const auto& p : points) {
        auto& m = merged[{p.y, p.x}];
        m.first += p.bed;
        ++m.second;
    }
    std::vector<ObservationPoint> out;
    out.reserve(merged.size());
    for (const auto& [key, v] : merged) out.push_back({key.second, key.first, v.first / static_cast<double>(v.second)});
    if (cfg.max_centers > 0 && out.size() > cfg.max_centers) {
        std::mt19937_64 rng(cfg.seed);
        std::vector<std::size_t> idx(out.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(cfg.max_centers);
        std::sort(idx.begin(), idx.end());
        std::vector<ObservationPoint> sub;
        sub.reserve(idx.size());
        for (auto i : idx) sub.push_back(out[i]);
        out = std::move(sub);
    }
    return out;
}

RbfModel RbfModel::fit(std::span<const ObservationPoint> centers, const RbfConfig& cfg) {
    cfg.validate();
    if (centers.empty()) throw std::invalid_argument("RBF needs at least one center");
    const auto n = static_cast<Eigen::Index>(centers.size());
    Eigen::MatrixXd K(n, n);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = centers[i].bed;
        for (Eigen::Index j = 0; j <= i; ++j) {
            const double r = std::hypot(centers[i].x - centers[j].x, centers[i].y - centers[j].y);
            K(i, j) = K(j, i) = multiquadric(r, cfg.epsilon);
        }
        K(i, i) += cfg.ridge;
    }
    // The multiquadric matrix is symmetric but indefinite, so a pivoted LU is used.
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
    Eigen::VectorXd w = lu.solve(v);
    if (!w.allFinite())
        throw NumericalError("RBF system could not be solved (non-finite weights); increase the ridge term");
    const double rel = (K * w - v).norm() / std::max(v.norm(), 1e-300);
    if (!(rel < 1e-6))
        throw NumericalError("RBF system is ill-conditioned (relative residual " + std::to_string(rel) +
                             "); increase the ridge term");
    RbfModel m;
    m.centers_.assign(centers.begin(), centers.end());
    m.weights_.assign(w.data(), w.data() + n);
    m.epsilon_ = cfg.epsilon;
    return m;
}

double RbfModel::operator()(double x, double y) const {
    double s = 0.0;
    for (std::size_t j = 0; j < centers_.size(); ++j)
        s += weights_[j] * multiquadric(std::hypot(x - centers_[j].x, y - centers_[j].y), epsilon_);
    return s;
}

BaselineGrid idw_predict(const ObservationSet& obs, const ElevationGrid& layout, const IdwConfig& cfg,
                         std::span<const CellIndex> targets) {
    check_layout(obs, layout);
    cfg.validate();
    const auto pts = cell_observations(obs);
    if (pts.empty()) throw std::invalid_argument("IDW needs at least one observation");
    const KnnIndex index(pts);
    const auto cells = target_cells(layout, targets);
    std::vector<Point2> at;
    at.reserve(cells.size());
    for (const auto& c : cells) at.push_back({layout.cell_center_x(c.col), layout.cell_center_y(c.row)});
    const auto values = idw_at(index, at, cfg);
    return {assemble(layout, cells, values), std::min(cfg.k, pts.size())};
}

BaselineGrid rbf_predict(const ObservationSet& obs, const ElevationGrid& layout, const RbfConfig& cfg,
                         std::span<const CellIndex> targets) {
    check_layout(obs, layout);
    const auto centers = select_centers(cell_observations(obs), cfg);
    const auto model = RbfModel::fit(centers, cfg);
    const auto cells = target_cells(layout, targets);
    std::vector<double> values(cells.size());
    for (std::size_t k = 0; k < cells.size(); ++k)
        values[k] = model(layout.cell_center_x(cells[k].col), layout.cell_center_y(cells[k].row));
    return {assemble(layout, cells, values), model.center_count()};
}

}  // namespace bedtopo
