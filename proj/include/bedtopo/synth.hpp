#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bedtopo/raster.hpp"

namespace bedtopo {

// Every knob of the synthetic glacier. Lengths marked "cells" are in grid cells; elevations in m,
// velocities in m/yr.
struct SynthParams {
    std::size_t rows = 128;
    std::size_t cols = 128;
    double cell_size = 150.0;

    double base_elevation = 300.0;
    double regional_slope = 1.5;  // m per cell, rising with column index
    std::size_t bumps = 60;
    double bump_amplitude_min = 30.0;
    double bump_amplitude_max = 140.0;
    double bump_sigma_min = 1.5;  // cells
    double bump_sigma_max = 4.0;  // cells
    double trough_depth = 450.0;
    double trough_width = 7.0;       // cells, Gaussian sigma across the trough
    double trough_meander = 12.0;    // cells
    double roughness = 25.0;         // m, amplitude of a fine smoothed-noise layer
    double roughness_scale = 2.0;    // cells

    double thickness_mean = 900.0;
    double thickness_variation = 300.0;
    double thickness_scale = 14.0;  // cells

    double speed = 120.0;
    double speed_trough_gain = 4.0;  // fast-flow multiplier along the trough
    double flow_perturbation = 0.25; // relative amplitude of the stream-function perturbation
    double dhdt_amplitude = 3.0;

    std::size_t flight_lines = 8;
    double line_angle_deg = 8.0;
    double noise_std = 0.0;

    double reference_smoothing = 2.5;  // cells
    double reference_error = 40.0;     // m, smooth product error away from the lines
    double reference_error_scale = 10.0;  // cells
    double reference_line_falloff = 3.0;  // cells; the product error fades near flight lines

    std::size_t max_retries = 4;

    void validate() const;
};

struct Scenario {
    SynthParams params;
    std::uint64_t seed = 0;
    ElevationGrid true_bed;
    FieldStack stack;
    ElevationGrid apparent_mass_balance;
    ObservationSet observations;
    ReferenceGrid reference;

    double mass_residual = 0.0;             // max |div((s-b) v) - adot| over the interior
    std::size_t expected_radar_cells = 0;  // sum over lines of the traversal cell count
    std::size_t attempts = 1;

    const ElevationGrid& surface() const { return stack.surface(); }
    ElevationGrid thickness() const;
};

// Fully determined by (params, seed). Throws ConfigError for invalid parameters and
// NumericalError when no attempt yields positive thickness everywhere.
Scenario generate_scenario(const SynthParams& params, std::uint64_t seed);

// max over interior cells of |div(H v) - adot|, with the central-difference stencil used by
// compute_gradients.
double mass_conservation_residual(const ElevationGrid& thickness, const ElevationGrid& vx, const ElevationGrid& vy,
                                  const ElevationGrid& adot);

// Separable Gaussian blur with mirrored borders; sigma in cells (0 copies the input).
std::vector<double> gaussian_blur(const std::vector<double>& values, std::size_t rows, std::size_t cols, double sigma);

// Cells crossed by the segment (x0,y0)-(x1,y1) in grid units (column, row), in traversal order.
std::vector<CellIndex> traverse_segment(double x0, double y0, double x1, double y1, std::size_t rows,
                                        std::size_t cols);

// Directory layout: true_bed.btg, s.btg, vx.btg, vy.btg, dhdt.btg, smb.btg, adot.btg,
// reference.btg, observations.csv, scenario.json.
void save_scenario(const std::filesystem::path& dir, const Scenario& scenario);
Scenario load_scenario(const std::filesystem::path& dir);

std::string synth_params_json(const SynthParams& params);
SynthParams synth_params_from_json(const std::string& text);

}  // namespace bedtopo
