#include "bedtopo/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "bedtopo/binary_io.hpp"
#include "bedtopo/error.hpp"

namespace bedtopo {

ElevationGrid::ElevationGrid(std::size_t rows, std::size_t cols, GeoTransform geo, std::vector<double> values,
                             std::vector<std::uint8_t> validity)
    : rows_(rows), cols_(cols), geo_(geo), values_(std::move(values)), valid_(std::move(validity)) {
    if (rows_ < 2 || cols_ < 2)
        throw DimensionError("grid must be at least 2x2, got " + std::to_string(rows_) + "x" + std::to_string(cols_));
    if (values_.size() != rows_ * cols_ || valid_.size() != rows_ * cols_)
        throw DimensionError("grid payload does not match rows*cols");
    if (!(geo_.dx > 0.0) || !(geo_.dy > 0.0)) throw std::invalid_argument("grid cell size must be positive");
}

ElevationGrid ElevationGrid::filled(std::size_t rows, std::size_t cols, GeoTransform geo, double fill) {
    return ElevationGrid(rows, cols, geo, std::vector<double>(rows * cols, fill),
                         std::vector<std::uint8_t>(rows * cols, 1));
}

std::size_t ElevationGrid::valid_count() const {
    return static_cast<std::size_t>(std::count_if(valid_.begin(), valid_.end(), [](auto v) { return v != 0; }));
}

std::optional<CellIndex> ElevationGrid::locate(double x, double y) const {
    if (!std::isfinite(x) || !std::isfinite(y)) return std::nullopt;
    const double fc = std::floor((x - geo_.x0) / geo_.dx);
    const double fr = std::floor((y - geo_.y0) / geo_.dy);
    if (fc < 0.0 || fr < 0.0 || fc >= static_cast<double>(cols_) || fr >= static_cast<double>(rows_))
        return std::nullopt;
    return CellIndex{static_cast<std::size_t>(fr), static_cast<std::size_t>(fc)};
}

bool ElevationGrid::same_layout(const ElevationGrid& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && geo_ == other.geo_;
}

FieldStack::FieldStack(ElevationGrid surface, ElevationGrid vx, ElevationGrid vy, ElevationGrid dhdt,
                       ElevationGrid smb)
    : fields_{std::move(surface), std::move(vx), std::move(vy), std::move(dhdt), std::move(smb)} {
    for (std::size_t i = 1; i < kFieldCount; ++i) {
        if (!fields_[i].same_layout(fields_[0]))
            throw DimensionError("field '" + std::string(kNames[i]) + "' is not co-registered with 's'");
    }
}

std::size_t ObservationSet::masked_count() const {
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto v) { return v != 0; }));
}

ReferenceGrid::ReferenceGrid(ElevationGrid grid, const ObservationSet& obs)
    : grid_(std::move(grid)), radar_(grid_.size(), 0), reference_(grid_.size(), 0) {
    if (obs.rows != grid_.rows() || obs.cols != grid_.cols())
        throw DimensionError("observation mask does not match the reference grid");
    const auto valid = grid_.validity();
    for (std::size_t i = 0; i < grid_.size(); ++i) {
        if (!valid[i]) continue;
        if (obs.mask[i])
            radar_[i] = 1;
        else
            reference_[i] = 1;
    }
}

ObservationSet rasterize_points(std::span<const ObservationPoint> points, const ElevationGrid& target) {
    ObservationSet out;
    out.points.assign(points.begin(), points.end());
    out.rows = target.rows();
    out.cols = target.cols();
    out.geo = target.geo();
    out.mask.assign(target.size(), 0);
    out.values.assign(target.size(), std::numeric_limits<double>::quiet_NaN());

    std::map<std::size_t, std::vector<double>> per_cell;
    for (const auto& p : points) {
        const auto cell = target.locate(p.x, p.y);
        if (!cell || !std::isfinite(p.bed)) {
            ++out.skipped;
            continue;
        }
        per_cell[cell->row * target.cols() + cell->col].push_back(p.bed);
    }
    for (auto& [idx, vals] : per_cell) {
        // Sorted, anchored accumulation: permutation-invariant and exact for repeated values.
        std::sort(vals.begin(), vals.end());
        const double anchor = vals.front();
        double acc = 0.0;
        for (double v : vals) acc += v - anchor;
        out.values[idx] = anchor + acc / static_cast<double>(vals.size());
        out.mask[idx] = 1;
    }
    return out;
}

namespace {
constexpr std::string_view kGridMagic = "BTG1";
}

std::vector<std::uint8_t> encode_grid(const ElevationGrid& grid) {
    io::ByteWriter w;
    w.magic(kGridMagic);
    w.u32(static_cast<std::uint32_t>(grid.rows()));
    w.u32(static_cast<std::uint32_t>(grid.cols()));
    w.f64(grid.geo().x0);
    w.f64(grid.geo().y0);
    w.f64(grid.geo().dx);
    w.f64(grid.geo().dy);
    for (double v : grid.values()) w.f64(v);
    for (auto v : grid.validity()) w.u8(v ? 1 : 0);
    return w.data();
}

ElevationGrid decode_grid(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    r.expect_magic(kGridMagic, "BTG1 grid");
    const std::size_t rows = r.u32();
    const std::size_t cols = r.u32();
    GeoTransform geo;
    geo.x0 = r.f64();
    geo.y0 = r.f64();
    geo.dx = r.f64();
    geo.dy = r.f64();
    const std::size_t n = rows * cols;
    if (r.remaining() != n * 9)
        throw TruncationError("BTG1 grid: header announces " + std::to_string(rows) + "x" + std::to_string(cols) +
                              " but payload has " + std::to_string(r.remaining()) + " bytes");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    std::vector<std::uint8_t> valid(n);
    for (auto& v : valid) {
        v = r.u8();
        if (v > 1) throw FormatError("BTG1 grid: validity flag must be 0 or 1");
    }
    return ElevationGrid(rows, cols, geo, std::move(values), std::move(valid));
}

void write_grid(const std::filesystem::path& path, const ElevationGrid& grid) {
    io::write_file(path, encode_grid(grid));
}

ElevationGrid read_grid(const std::filesystem::path& path) { return decode_grid(io::read_file(path)); }

void write_observations_csv(const std::filesystem::path& path, std::span<const ObservationPoint> points) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.precision(17);
    out << "x,y,bed\n";
    for (const auto& p : points) out << p.x << ',' << p.y << ',' << p.bed << '\n';
}

std::vector<ObservationPoint> read_observations_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty observation file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "x,y,bed") throw FormatError(path.string() + ": expected header 'x,y,bed'");

    std::vector<ObservationPoint> points;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string fx, fy, fb;
        if (!std::getline(ss, fx, ',') || !std::getline(ss, fy, ',') || !std::getline(ss, fb) ||
            fb.find(',') != std::string::npos)
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
        try {
            points.push_back({std::stod(fx), std::stod(fy), std::stod(fb)});
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": non-numeric field");
        }
    }
    return points;
}

}  // namespace bedtopo
