#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bedtopo/raster.hpp"

namespace bedtopo {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// One observation per radar cell, placed at the cell center with the cell's mean value.
std::vector<ObservationPoint> cell_observations(const ObservationSet& obs);

// Exact k-nearest-neighbor search over a uniform bucket grid. Neighbors are ordered by
// (distance, y, x, value) so ties resolve independently of input order.
class KnnIndex {
public:
    explicit KnnIndex(std::span<const ObservationPoint> points);

    // Up to k indices into the point list with distance <= max_distance, nearest first.
    std::vector<std::size_t> query(double x, double y, std::size_t k, double max_distance) const;
    const std::vector<ObservationPoint>& points() const { return pts_; }

private:
    std::vector<ObservationPoint> pts_;
    double x0_ = 0.0, y0_ = 0.0, cell_ = 1.0;
    std::size_t nx_ = 1, ny_ = 1;
    std::vector<std::size_t> start_;  // CSR bucket offsets, nx*ny + 1
    std::vector<std::size_t> items_;
};

struct IdwConfig {
    std::size_t k = 4000;
    double power = 2.0;
    double threshold = 1e10;

    void validate() const;
};

// NaN where no observation lies within the threshold.
std::vector<double> idw_at(const KnnIndex& index, std::span<const Point2> targets, const IdwConfig& cfg);

struct RbfConfig {
    double epsilon = 2.0;  // phi(r) = sqrt((r / epsilon)^2 + 1)
    double ridge = 1e-3;
    std::size_t max_centers = 4000;  // 0 keeps every center
    std::uint64_t seed = 0;

    void validate() const;
};

class RbfModel {
public:
    // Throws NumericalError when the factorization fails or produces non-finite weights.
    static RbfModel fit(std::span<const ObservationPoint> centers, const RbfConfig& cfg);

    double operator()(double x, double y) const;
    std::size_t center_count() const { return centers_.size(); }
    const std::vector<ObservationPoint>& centers() const { return centers_; }
    const std::vector<double>& weights() const { return weights_; }

private:
    std::vector<ObservationPoint> centers_;
    std::vector<double> weights_;
    double epsilon_ = 2.0;
};

double multiquadric(double r, double epsilon);

// Seeded subsample without replacement when there are more than cfg.max_centers points;
// points sharing a location are merged by averaging first.
std::vector<ObservationPoint> select_centers(std::span<const ObservationPoint> points, const RbfConfig& cfg);

struct BaselineGrid {
    ElevationGrid grid;
    std::size_t centers_used = 0;
};

// Predictions at the cell centers of `layout` (every cell when `targets` is empty); untargeted
// cells and cells without a prediction are invalid.
BaselineGrid idw_predict(const ObservationSet& obs, const ElevationGrid& layout, const IdwConfig& cfg,
                         std::span<const CellIndex> targets = {});
BaselineGrid rbf_predict(const ObservationSet& obs, const ElevationGrid& layout, const RbfConfig& cfg,
                         std::span<const CellIndex> targets = {});

}  // namespace bedtopo
