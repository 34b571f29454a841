#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace bedtopo {

// Grid origin and cell size. Cell (r, c) covers
// [x0 + c*dx, x0 + (c+1)*dx) x [y0 + r*dy, y0 + (r+1)*dy).
struct GeoTransform {
    double x0 = 0.0;
    double y0 = 0.0;
    double dx = 1.0;
    double dy = 1.0;

    bool operator==(const GeoTransform&) const = default;
};

struct CellIndex {
    std::size_t row = 0;
    std::size_t col = 0;

    bool operator==(const CellIndex&) const = default;
};

// Row-major raster of real values with a per-cell validity flag.
class ElevationGrid {
public:
    ElevationGrid(std::size_t rows, std::size_t cols, GeoTransform geo, std::vector<double> values,
                  std::vector<std::uint8_t> validity);

    // All cells valid and set to `fill`.
    static ElevationGrid filled(std::size_t rows, std::size_t cols, GeoTransform geo, double fill = 0.0);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    const GeoTransform& geo() const { return geo_; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    std::span<const std::uint8_t> validity() const { return valid_; }
    std::span<std::uint8_t> validity() { return valid_; }

    double at(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    bool valid(std::size_t r, std::size_t c) const { return valid_[r * cols_ + c] != 0; }
    void set_valid(std::size_t r, std::size_t c, bool v) { valid_[r * cols_ + c] = v ? 1 : 0; }
    std::size_t valid_count() const;

    double cell_center_x(std::size_t c) const { return geo_.x0 + (static_cast<double>(c) + 0.5) * geo_.dx; }
    double cell_center_y(std::size_t r) const { return geo_.y0 + (static_cast<double>(r) + 0.5) * geo_.dy; }

    // Cell containing (x, y) under half-open cell membership, or nullopt outside the extent.
    std::optional<CellIndex> locate(double x, double y) const;

    bool same_layout(const ElevationGrid& other) const;

    bool operator==(const ElevationGrid&) const = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    GeoTransform geo_;
    std::vector<double> values_;
    std::vector<std::uint8_t> valid_;
};

// The five co-registered covariate rasters.
struct FieldStack {
    static constexpr std::size_t kFieldCount = 5;
    static constexpr std::array<std::string_view, kFieldCount> kNames{"s", "vx", "vy", "dhdt", "smb"};

    FieldStack(ElevationGrid surface, ElevationGrid vx, ElevationGrid vy, ElevationGrid dhdt, ElevationGrid smb);

    const ElevationGrid& field(std::size_t i) const { return fields_[i]; }
    const ElevationGrid& surface() const { return fields_[0]; }
    const ElevationGrid& vx() const { return fields_[1]; }
    const ElevationGrid& vy() const { return fields_[2]; }
    const ElevationGrid& dhdt() const { return fields_[3]; }
    const ElevationGrid& smb() const { return fields_[4]; }

    std::size_t rows() const { return fields_[0].rows(); }
    std::size_t cols() const { return fields_[0].cols(); }
    const GeoTransform& geo() const { return fields_[0].geo(); }

private:
    std::array<ElevationGrid, kFieldCount> fields_;
};

struct ObservationPoint {
    double x = 0.0;
    double y = 0.0;
    double bed = 0.0;
};

// Sparse bed measurements and their rasterization onto a reference layout.
struct ObservationSet {
    std::vector<ObservationPoint> points;
    std::size_t rows = 0;
    std::size_t cols = 0;
    GeoTransform geo;
    std::vector<std::uint8_t> mask;  // radar-covered cells
    std::vector<double> values;      // per-cell mean bed; NaN where mask is false
    std::size_t skipped = 0;         // points outside the grid extent

    std::size_t masked_count() const;
    bool covered(std::size_t r, std::size_t c) const { return mask[r * cols + c] != 0; }
};

// Reference bed m(x,y) together with the radar/non-radar partition of the valid cells.
class ReferenceGrid {
public:
    ReferenceGrid(ElevationGrid grid, const ObservationSet& obs);

    const ElevationGrid& grid() const { return grid_; }
    std::span<const std::uint8_t> radar_mask() const { return radar_; }
    std::span<const std::uint8_t> reference_mask() const { return reference_; }

private:
    ElevationGrid grid_;
    std::vector<std::uint8_t> radar_;
    std::vector<std::uint8_t> reference_;
};

// Averages points that share a cell; points outside the extent are counted in `skipped`.
// Cell means do not depend on point order.
ObservationSet rasterize_points(std::span<const ObservationPoint> points, const ElevationGrid& target);

// BTG1: "BTG1", u32 rows, u32 cols, f64 x0 y0 dx dy, rows*cols f64, rows*cols u8 validity.
std::vector<std::uint8_t> encode_grid(const ElevationGrid& grid);
ElevationGrid decode_grid(std::span<const std::uint8_t> bytes);
void write_grid(const std::filesystem::path& path, const ElevationGrid& grid);
ElevationGrid read_grid(const std::filesystem::path& path);

// CSV with header `x,y,bed`.
void write_observations_csv(const std::filesystem::path& path, std::span<const ObservationPoint> points);
std::vector<ObservationPoint> read_observations_csv(const std::filesystem::path& path);

}  // namespace bedtopo
