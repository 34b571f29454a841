#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "bedtopo/raster.hpp"

namespace bedtopo {

struct BasicMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    double r2 = 0.0;         // NaN when undefined
    bool r2_defined = true;  // false for a constant reference
    std::size_t count = 0;
};

// Over cells valid in both grids and set in `mask` (all such cells when empty).
BasicMetrics basic_metrics(const ElevationGrid& pred, const ElevationGrid& ref, std::span<const std::uint8_t> mask = {});

// Peak value L for SSIM and PSNR: range of the valid reference cells, or 1 for a flat reference.
double reference_range(const ElevationGrid& ref);

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

// Mean local SSIM over every window lying inside the grid in which all cells of both grids are
// valid. L = reference_range(ref). Throws DimensionError if the grid is smaller than the window
// and std::invalid_argument if no window is fully valid.
double ssim(const ElevationGrid& pred, const ElevationGrid& ref, const SsimOptions& opt = {});

// 10 log10(L^2 / mse); +infinity when mse = 0.
double psnr(const ElevationGrid& pred, const ElevationGrid& ref);

struct TriReport {
    double sum_squared = 0.0;
    std::size_t pairs = 0;
    double tri = 0.0;
};

// Neighbor offsets (0,1), (1,0), (1,1), (1,-1); pairs that leave the grid or touch an invalid cell
// are skipped and the mean uses the number of pairs actually accumulated.
TriReport tri(const ElevationGrid& grid);

// |tri_pred - tri_ref| / tri_pred * 100; NaN when tri_pred is 0.
double tri_relative_difference(double tri_pred, double tri_ref);
double tri_relative_difference(const ElevationGrid& pred, const ElevationGrid& ref);

struct MetricReport {
    std::string method;
    std::string target;
    double mae = 0.0;
    double rmse = 0.0;
    double r2 = 0.0;
    bool r2_defined = true;
    double ssim = 0.0;
    double psnr = 0.0;  // +infinity for identical grids
    double tri_pred = 0.0;
    double tri_ref = 0.0;
    double tri_rel_diff_percent = 0.0;  // NaN when tri_pred is 0
    std::size_t cells = 0;
};

// Cells outside `mask` (when given) are treated as invalid in both grids.
MetricReport evaluate_grids(const ElevationGrid& pred, const ElevationGrid& ref, std::string method = {},
                            std::string target = {}, std::span<const std::uint8_t> mask = {},
                            const SsimOptions& ssim_options = {});

// Copy of `grid` with cells outside `mask` flagged invalid.
ElevationGrid restrict_to(const ElevationGrid& grid, std::span<const std::uint8_t> mask);

// Non-finite values are written as JSON null with a companion flag.
std::string metric_report_json(const MetricReport& report);
std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& report);
void write_metric_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                         std::span<const MetricReport> reports);

}  // namespace bedtopo
