#include "bedtopo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "bedtopo/error.hpp"

namespace bedtopo {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

void require_layout(const ElevationGrid& a, const ElevationGrid& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError("grids differ in shape: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                             " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

std::vector<double> gaussian_weights(std::size_t n, double sigma) {
    std::vector<double> w(n);
    const double mid = (static_cast<double>(n) - 1.0) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(i) - mid;
        w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

// Separable "valid" filtering: out has (rows - n + 1) x (cols - n + 1) entries.
std::vector<double> filter_valid(const std::vector<double>& in, std::size_t rows, std::size_t cols,
                                 const std::vector<double>& w) {
    const std::size_t n = w.size(), oc = cols - n + 1, orows = rows - n + 1;
    std::vector<double> tmp(rows * oc, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < oc; ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += w[k] * in[r * cols + c + k];
            tmp[r * oc + c] = s;
        }
    std::vector<double> out(orows * oc, 0.0);
    for (std::size_t r = 0; r < orows; ++r)
        for (std::size_t c = 0; c < oc; ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += w[k] * tmp[(r + k) * oc + c];
            out[r * oc + c] = s;
        }
    return out;
}

std::string number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

BasicMetrics basic_metrics(const ElevationGrid& pred, const ElevationGrid& ref, std::span<const std::uint8_t> mask) {
    require_layout(pred, ref);
    if (!mask.empty() && mask.size() != ref.size()) throw DimensionError("metric mask does not match the grid");
    std::vector<std::size_t> cells;
    for (std::size_t i = 0; i < ref.size(); ++i)
        if (pred.validity()[i] && ref.validity()[i] && (mask.empty() || mask[i])) cells.push_back(i);
    if (cells.empty()) throw std::invalid_argument("no cells to evaluate");

    BasicMetrics m;
    m.count = cells.size();
    const double n = static_cast<double>(cells.size());
    double abs_sum = 0.0, sq_sum = 0.0, ref_sum = 0.0;
    for (auto i : cells) {
        const double d = pred.values()[i] - ref.values()[i];
        abs_sum += std::abs(d);
        sq_sum += d * d;
        ref_sum += ref.values()[i];
    }
    const double ref_mean = ref_sum / n;
    double ss_tot = 0.0;
    for (auto i : cells) {
        const double d = ref.values()[i] - ref_mean;
        ss_tot += d * d;
    }
    m.mae = abs_sum / n;
    m.rmse = std::sqrt(sq_sum / n);
    if (ss_tot > 0.0) {
        m.r2 = 1.0 - sq_sum / ss_tot;
    } else {
        m.r2 = kNaN;
        m.r2_defined = false;
    }
    return m;
}

double reference_range(const ElevationGrid& ref) {
    double lo = kInf, hi = -kInf;
    for (std::size_t i = 0; i < ref.size(); ++i)
        if (ref.validity()[i]) {
            lo = std::min(lo, ref.values()[i]);
            hi = std::max(hi, ref.values()[i]);
        }
    if (!(hi > lo)) return 1.0;
    return hi - lo;
}

double ssim(const ElevationGrid& pred, const ElevationGrid& ref, const SsimOptions& opt) {
    require_layout(pred, ref);
    const std::size_t n = opt.window, rows = ref.rows(), cols = ref.cols();
    if (n == 0 || rows < n || cols < n)
        throw DimensionError("grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                             " is smaller than the SSIM window " + std::to_string(n));
    const double L = reference_range(ref);
    const double c1 = (opt.k1 * L) * (opt.k1 * L);
    const double c2 = (opt.k2 * L) * (opt.k2 * L);

    const std::size_t cells = rows * cols;
    std::vector<double> x(cells), y(cells), xx(cells), yy(cells), xy(cells), bad(cells);
    for (std::size_t i = 0; i < cells; ++i) {
        const bool ok = pred.validity()[i] && ref.validity()[i];
        x[i] = ok ? pred.values()[i] : 0.0;
        y[i] = ok ? ref.values()[i] : 0.0;
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
        bad[i] = ok ? 0.0 : 1.0;
    }
    const auto w = gaussian_weights(n, opt.sigma);
    const auto mx = filter_valid(x, rows, cols, w);
    const auto my = filter_valid(y, rows, cols, w);
    const auto mxx = filter_valid(xx, rows, cols, w);
    const auto myy = filter_valid(yy, rows, cols, w);
    const auto mxy = filter_valid(xy, rows, cols, w);

    // Count invalid cells per window with a box sum (exact in integers).
    const std::size_t orows = rows - n + 1, ocols = cols - n + 1;
    std::vector<double> box(n, 1.0);
    const auto nbad = filter_valid(bad, rows, cols, box);

    double total = 0.0;
    std::size_t windows = 0;
    for (std::size_t i = 0; i < orows * ocols; ++i) {
        if (nbad[i] > 0.5) continue;
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cxy = mxy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        ++windows;
    }
    if (windows == 0) throw std::invalid_argument("no SSIM window lies entirely on valid cells");
    return total / static_cast<double>(windows);
}

double psnr(const ElevationGrid& pred, const ElevationGrid& ref) {
    require_layout(pred, ref);
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        if (pred.validity()[i] && ref.validity()[i]) {
            const double d = pred.values()[i] - ref.values()[i];
            sq += d * d;
            ++n;
        }
    if (n == 0) throw std::invalid_argument("no cells to evaluate");
    const double mse = sq / static_cast<double>(n);
    if (mse == 0.0) return kInf;
    const double L = reference_range(ref);
    return 10.0 * std::log10(L * L / mse);
}

TriReport tri(const ElevationGrid& grid) {
    const std::size_t rows = grid.rows(), cols = grid.cols();
    if (rows < 2 || cols < 2) throw DimensionError("TRI needs a grid of at least 2x2");
    static constexpr int kOffsets[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
    TriReport rep;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            if (!grid.valid(r, c)) continue;
            for (const auto& o : kOffsets) {
                const std::size_t rr = r + static_cast<std::size_t>(o[0]);
                if (rr >= rows || (o[1] < 0 && c == 0) || (o[1] > 0 && c + 1 >= cols)) continue;
                const std::size_t cc = static_cast<std::size_t>(static_cast<long long>(c) + o[1]);
                if (!grid.valid(rr, cc)) continue;
                const double d = grid.at(r, c) - grid.at(rr, cc);
                rep.sum_squared += d * d;
                ++rep.pairs;
            }
        }
    if (rep.pairs == 0) throw std::invalid_argument("TRI: grid has no pair of adjacent valid cells");
    rep.tri = std::sqrt(rep.sum_squared / static_cast<double>(rep.pairs));
    return rep;
}

double tri_relative_difference(double tri_pred, double tri_ref) {
    if (tri_pred == 0.0) return kNaN;
    return std::abs(tri_pred - tri_ref) / tri_pred * 100.0;
}

double tri_relative_difference(const ElevationGrid& pred, const ElevationGrid& ref) {
    return tri_relative_difference(tri(pred).tri, tri(ref).tri);
}

ElevationGrid restrict_to(const ElevationGrid& grid, std::span<const std::uint8_t> mask) {
    if (mask.size() != grid.size()) throw DimensionError("mask does not match the grid");
    ElevationGrid out = grid;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!mask[i]) out.validity()[i] = 0;
    return out;
}

MetricReport evaluate_grids(const ElevationGrid& pred_in, const ElevationGrid& ref_in, std::string method,
                            std::string target, std::span<const std::uint8_t> mask, const SsimOptions& ssim_options) {
    require_layout(pred_in, ref_in);
    const ElevationGrid pred = mask.empty() ? pred_in : restrict_to(pred_in, mask);
    const ElevationGrid ref = mask.empty() ? ref_in : restrict_to(ref_in, mask);
    MetricReport r;
    r.method = std::move(method);
    r.target = std::move(target);
    const auto b = basic_metrics(pred, ref);
    r.mae = b.mae;
    r.rmse = b.rmse;
    r.r2 = b.r2;
    r.r2_defined = b.r2_defined;
    r.cells = b.count;
    r.ssim = ssim(pred, ref, ssim_options);
    r.psnr = psnr(pred, ref);
    r.tri_pred = tri(pred).tri;
    r.tri_ref = tri(ref).tri;
    r.tri_rel_diff_percent = tri_relative_difference(r.tri_pred, r.tri_ref);
    return r;
}

std::string metric_report_json(const MetricReport& r) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["method"] = r.method;
    j["target"] = r.target;
    j["cells"] = r.cells;
    j["mae"] = r.mae;
    j["rmse"] = r.rmse;
    j["r2"] = num(r.r2);
    j["r2_defined"] = r.r2_defined;
    j["ssim"] = r.ssim;
    j["psnr"] = num(r.psnr);
    j["psnr_infinite"] = std::isinf(r.psnr);
    j["tri_pred"] = r.tri_pred;
    j["tri_ref"] = r.tri_ref;
    j["tri_rel_diff_percent"] = num(r.tri_rel_diff_percent);
    j["tri_rel_diff_defined"] = !std::isnan(r.tri_rel_diff_percent);
    return j.dump(2);
}

std::string metric_csv_header() {
    return "method,target,cells,mae,rmse,r2,ssim,psnr,tri_pred,tri_ref,tri_rel_diff_percent";
}

std::string metric_csv_row(const MetricReport& r) {
    std::ostringstream os;
    os << r.method << ',' << r.target << ',' << r.cells << ',' << number(r.mae) << ',' << number(r.rmse) << ','
       << number(r.r2) << ',' << number(r.ssim) << ',' << number(r.psnr) << ',' << number(r.tri_pred) << ','
       << number(r.tri_ref) << ',' << number(r.tri_rel_diff_percent);
    return os.str();
}

void write_metric_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                         std::span<const MetricReport> reports) {
    auto arr = nlohmann::json::array();
    for (const auto& r : reports) arr.push_back(nlohmann::json::parse(metric_report_json(r)));
    std::ofstream js(json_path);
    if (!js) throw std::runtime_error("cannot write " + json_path.string());
    js << arr.dump(2) << '\n';
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
    csv << metric_csv_header() << '\n';
    for (const auto& r : reports) csv << metric_csv_row(r) << '\n';
}

}  // namespace bedtopo
