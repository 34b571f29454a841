#include "bedtopo/patches.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "bedtopo/error.hpp"

namespace bedtopo {

std::string_view to_string(Membership m) {
    switch (m) {
        case Membership::train: return "train";
        case Membership::validation: return "validation";
        case Membership::test: return "test";
        case Membership::unassigned: break;
    }
    return "unassigned";
}

Membership membership_from_string(std::string_view s) {
    if (s == "train") return Membership::train;
    if (s == "validation") return Membership::validation;
    if (s == "test") return Membership::test;
    if (s == "unassigned") return Membership::unassigned;
    throw FormatError("unknown patch membership '" + std::string(s) + "'");
}

std::vector<std::size_t> patch_offsets(std::size_t extent, std::size_t size, std::size_t stride) {
    if (size == 0 || stride == 0) throw std::invalid_argument("patch size and stride must be positive");
    if (size > extent)
        throw DimensionError("patch size " + std::to_string(size) + " exceeds extent " + std::to_string(extent));
    std::vector<std::size_t> offs;
    for (std::size_t o = 0; o + size <= extent; o += stride) offs.push_back(o);
    if (offs.back() + size < extent) offs.push_back(extent - size);
    return offs;
}

std::vector<PatchIndex> extract_patches(std::size_t rows, std::size_t cols, std::size_t size, std::size_t stride) {
    const auto ro = patch_offsets(rows, size, stride);
    const auto co = patch_offsets(cols, size, stride);
    std::vector<PatchIndex> out;
    out.reserve(ro.size() * co.size());
    for (auto r : ro)
        for (auto c : co) out.push_back({r, c, size, Membership::unassigned});
    return out;
}

RandomSplit split_random(std::span<const PatchIndex> patches, double train_fraction, std::uint64_t seed) {
    if (patches.empty()) throw std::invalid_argument("cannot split an empty patch list");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("train fraction must lie strictly between 0 and 1");

    std::vector<PatchIndex> shuffled(patches.begin(), patches.end());
    std::mt19937_64 rng(seed);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    const auto n = static_cast<double>(shuffled.size());
    // The small slack keeps exact products such as 10 * 0.2 from rounding down to 1.
    const auto n_val = static_cast<std::size_t>(std::floor(n * (1.0 - train_fraction) + 1e-9));

    RandomSplit split;
    for (std::size_t i = 0; i < shuffled.size(); ++i) {
        auto p = shuffled[i];
        if (i < shuffled.size() - n_val) {
            p.membership = Membership::train;
            split.train.push_back(p);
        } else {
            p.membership = Membership::validation;
            split.validation.push_back(p);
        }
    }
    return split;
}

std::size_t BandMap::band_of_patch(std::size_t row0, std::size_t size) const {
    if (size == 0 || row0 + size > rows) return 0;
    const auto first = band_of_row[row0];
    return band_of_row[row0 + size - 1] == first ? first : 0;
}

BandMap make_band_map(std::size_t rows, std::size_t bands) {
    if (bands < 2) throw std::invalid_argument("spatial protocol needs at least 2 bands");
    if (bands > rows)
        throw std::invalid_argument(std::to_string(bands) + " bands exceed " + std::to_string(rows) + " rows");
    BandMap m;
    m.rows = rows;
    m.bands = bands;
    m.band_height = rows / bands;
    m.band_of_row.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) m.band_of_row[r] = std::min(r / m.band_height + 1, bands);
    return m;
}

BandSplit split_spatial_bands(std::size_t rows, std::size_t bands, std::span<const PatchIndex> patches) {
    BandSplit out;
    out.map = make_band_map(rows, bands);
    for (auto p : patches) {
        const auto band = out.map.band_of_patch(p.row0, p.size);
        if (band == 0) {
            ++out.discarded;
            continue;
        }
        if (out.map.is_train_band(band)) {
            p.membership = Membership::train;
            out.train.push_back(p);
        } else {
            p.membership = Membership::test;
            out.test.push_back(p);
        }
    }
    out.empty_protocol = out.train.empty() && out.test.empty();
    return out;
}

std::vector<std::uint8_t> test_band_mask(const BandMap& map, std::size_t cols) {
    std::vector<std::uint8_t> mask(map.rows * cols, 0);
    for (std::size_t r = 0; r < map.rows; ++r)
        if (!map.row_is_train(r)) std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, 1);
    return mask;
}

void write_split_manifest(const std::filesystem::path& path, std::span<const PatchIndex> patches) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << "row0,col0,membership\n";
    for (const auto& p : patches) out << p.row0 << ',' << p.col0 << ',' << to_string(p.membership) << '\n';
}

std::vector<PatchIndex> read_split_manifest(const std::filesystem::path& path, std::size_t size) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
    std::string line;
    std::getline(in, line);
    if (line != "row0,col0,membership") throw FormatError(path.string() + ": bad manifest header");
    std::vector<PatchIndex> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string r, c, m;
        std::getline(ss, r, ',');
        std::getline(ss, c, ',');
        std::getline(ss, m);
        out.push_back({std::stoul(r), std::stoul(c), size, membership_from_string(m)});
    }
    return out;
}

}  // namespace bedtopo
