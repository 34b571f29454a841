#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace bedtopo {

enum class Membership : std::uint8_t { unassigned, train, validation, test };

std::string_view to_string(Membership m);
Membership membership_from_string(std::string_view s);

struct PatchIndex {
    std::size_t row0 = 0;
    std::size_t col0 = 0;
    std::size_t size = 16;
    Membership membership = Membership::unassigned;

    bool operator==(const PatchIndex&) const = default;
};

// Top-left corners at multiples of `stride`, plus one patch flush with each far edge when the
// last strided patch stops short of it. Row-major order.
std::vector<PatchIndex> extract_patches(std::size_t rows, std::size_t cols, std::size_t size, std::size_t stride);

// Offsets used along one axis by extract_patches.
std::vector<std::size_t> patch_offsets(std::size_t extent, std::size_t size, std::size_t stride);

struct RandomSplit {
    std::vector<PatchIndex> train;
    std::vector<PatchIndex> validation;
};

// Seeded shuffle, then floor(n * (1 - train_fraction)) patches go to validation.
RandomSplit split_random(std::span<const PatchIndex> patches, double train_fraction, std::uint64_t seed);

// Horizontal bands numbered from 1; odd bands train, even bands test.
struct BandMap {
    std::size_t rows = 0;
    std::size_t bands = 0;
    std::size_t band_height = 0;           // rows of every band but the last
    std::vector<std::size_t> band_of_row;  // 1-based band number per row

    bool is_train_band(std::size_t band) const { return band % 2 == 1; }
    bool row_is_train(std::size_t row) const { return is_train_band(band_of_row[row]); }
    // Band number containing rows [row0, row0 + size), or 0 when the patch straddles a boundary.
    std::size_t band_of_patch(std::size_t row0, std::size_t size) const;
};

BandMap make_band_map(std::size_t rows, std::size_t bands);

struct BandSplit {
    BandMap map;
    std::vector<PatchIndex> train;
    std::vector<PatchIndex> test;
    std::size_t discarded = 0;  // patches straddling a band boundary
    bool empty_protocol = false;  // no patch fits in any band
};

// Assigns every patch fully inside a train (test) band to the train (test) set; straddlers are dropped.
BandSplit split_spatial_bands(std::size_t rows, std::size_t bands, std::span<const PatchIndex> patches);

// Rows x cols mask of cells lying in test bands.
std::vector<std::uint8_t> test_band_mask(const BandMap& map, std::size_t cols);

// Audit manifest `row0,col0,membership`.
void write_split_manifest(const std::filesystem::path& path, std::span<const PatchIndex> patches);
std::vector<PatchIndex> read_split_manifest(const std::filesystem::path& path, std::size_t size);

}  // namespace bedtopo
