#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bedtopo/config.hpp"
#include "bedtopo/error.hpp"
#include "bedtopo/inference.hpp"
#include "bedtopo/metrics.hpp"
#include "bedtopo/pipeline.hpp"
#include "bedtopo/synth.hpp"

namespace fs = std::filesystem;
using namespace bedtopo;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct Common {
    std::string config;
    std::string out;
    std::string scenario;
    std::optional<std::uint64_t> seed;
};

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (!c.out.empty()) cfg.output_dir = c.out;
    if (!c.scenario.empty()) cfg.scenario_dir = c.scenario;
    if (c.seed) {
        cfg.seed = *c.seed;
        cfg.model.seed = *c.seed;
        cfg.train.seed = *c.seed;
    }
    cfg.validate();
    return cfg;
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

Scenario open_scenario(const RunConfig& cfg) {
    require_file(cfg.scenario_dir / "scenario.json", "scenario");
    return load_scenario(cfg.scenario_dir);
}

fs::path output_dir(const RunConfig& cfg) {
    auto dir = cfg.resolved_output_dir();
    fs::create_directories(dir);
    return dir;
}

void print_report(const MetricReport& r) {
    std::printf("%-6s vs %-20s MAE %10.4f  RMSE %10.4f  R2 %8.5f  SSIM %7.5f  PSNR %8.3f  TRI %7.3f/%7.3f (%.2f%%)\n",
                r.method.c_str(), r.target.c_str(), r.mae, r.rmse, r.r2, r.ssim, r.psnr, r.tri_pred, r.tri_ref,
                r.tri_rel_diff_percent);
}

int cmd_synth(const Common& c) {
    const auto cfg = resolve(c);
    const auto s = generate_scenario(cfg.synth, cfg.seed);
    save_scenario(cfg.scenario_dir, s);
    std::printf("scenario %zux%zu seed %llu -> %s\n", s.true_bed.rows(), s.true_bed.cols(),
                static_cast<unsigned long long>(s.seed), cfg.scenario_dir.string().c_str());
    std::printf("radar cells %zu (expected %zu), mass residual %.3g\n", s.observations.masked_count(),
                s.expected_radar_cells, s.mass_residual);
    return kOk;
}

int cmd_features(const Common& c) {
    const auto cfg = resolve(c);
    const auto s = open_scenario(cfg);
    const auto e = prepare_experiment(s, cfg);
    const auto dir = output_dir(cfg);
    write_features(dir / "features.btf", e.features);
    write_split_manifest(dir / "split.csv", e.patches);
    std::printf("%zu channels, %zu patches (train %zu, validation %zu, test %zu) -> %s\n", e.features.channels,
                e.patches.size(), e.train.size(), e.validation.size(), e.test.size(), dir.string().c_str());
    return kOk;
}

int cmd_train(const Common& c, bool quiet) {
    const auto cfg = resolve(c);
    const auto s = open_scenario(cfg);
    const auto e = prepare_experiment(s, cfg);
    const auto dir = output_dir(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    auto result = run_training(e, cfg, [&](const TraceRow& r) {
        if (!quiet)
            std::printf("iter %6zu  lr %.3e  loss %.4f  l_r %.4f  l_m %.4f  val %.4f\n", r.iteration, r.lr,
                        r.loss.total, r.loss.l_r, r.loss.l_m, r.val_loss);
    });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto ck = cfg.resolved_checkpoint();
    if (ck.has_parent_path()) fs::create_directories(ck.parent_path());
    nn::save_checkpoint(ck, result.best_model);
    write_trace_csv(dir / "loss_trace.csv", result.trace);
    std::printf("trained %zu iterations in %.1fs%s; best validation loss %.6g at iteration %zu -> %s\n",
                result.iterations_run, secs, result.early_stopped ? " (early stop)" : "", result.best_val_loss,
                result.best_iteration, ck.string().c_str());
    return kOk;
}

int cmd_predict(const Common& c, const std::string& checkpoint) {
    auto cfg = resolve(c);
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    const auto s = open_scenario(cfg);
    const auto e = prepare_experiment(s, cfg);
    const auto ck_path = cfg.resolved_checkpoint();
    require_file(ck_path, "checkpoint");
    auto ck = nn::load_checkpoint(ck_path);
    const auto dir = output_dir(cfg);
    const auto pred = predict_grid(ck.model, e, cfg);
    write_grid(dir / "prediction.btg", pred);
    write_grid(dir / "difference.btg", difference_grid(pred, s.reference.grid()));
    std::printf("prediction and difference grids -> %s\n", dir.string().c_str());
    return kOk;
}

int cmd_evaluate(const Common& c, const std::string& pred_path, const std::string& label) {
    const auto cfg = resolve(c);
    const auto s = open_scenario(cfg);
    const auto e = prepare_experiment(s, cfg);
    const auto dir = output_dir(cfg);
    const fs::path p = pred_path.empty() ? dir / "prediction.btg" : fs::path(pred_path);
    require_file(p, "prediction grid");
    const auto pred = read_grid(p);
    const auto reports = evaluate_prediction(pred, s, e, cfg, label);
    write_metric_report(dir / "metrics.json", dir / "metrics.csv", reports);
    for (const auto& r : reports) print_report(r);
    return kOk;
}

int cmd_baseline(const Common& c, const std::string& method) {
    const auto cfg = resolve(c);
    const auto s = open_scenario(cfg);
    const auto e = prepare_experiment(s, cfg);
    const auto dir = output_dir(cfg);
    std::vector<MetricReport> reports;
    auto run = [&](const std::string& name) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto g = name == "idw" ? run_idw(s, e, cfg) : run_rbf(s, e, cfg);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_grid(dir / (name + ".btg"), g.grid);
        std::printf("%s: %zu centers, %.1fs\n", name.c_str(), g.centers_used, secs);
        for (auto& r : evaluate_prediction(g.grid, s, e, cfg, name)) reports.push_back(std::move(r));
    };
    if (method == "idw" || method == "both") run("idw");
    if (method == "rbf" || method == "both") run("rbf");
    write_metric_report(dir / "baseline_metrics.json", dir / "baseline_metrics.csv", reports);
    for (const auto& r : reports) print_report(r);
    return kOk;
}

int cmd_gradcheck(const Common& c, double tolerance) {
    const auto cfg = resolve(c);
    nn::GradCheckOptions opt;
    opt.tolerance = tolerance;
    const auto rep = run_gradient_suite(cfg.seed, opt);
    for (const auto& p : rep.params)
        std::printf("%-22s %7zu  max rel err %.3e  failures %zu\n", p.name.c_str(), p.count, p.max_rel_error,
                    p.failures);
    std::printf("%s: %zu elements, %zu failures, %zu kink retries, max rel err %.3e, %.1fs\n",
                rep.passed() ? "PASS" : "FAIL", rep.checked, rep.failures, rep.kink_retries, rep.max_rel_error,
                rep.seconds);
    return rep.passed() ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bed topography reconstruction from sparse radar lines and surface covariates"};
    app.require_subcommand(1);
    Common common;
    app.add_option("-c,--config", common.config, "JSON run configuration");
    app.add_option("-o,--out", common.out, "output directory (default: $BEDTOPO_OUTPUT_DIR or ./bedtopo_out)");
    app.add_option("-s,--scenario", common.scenario, "scenario directory");
    app.add_option("--seed", common.seed, "override the configured seed");

    auto* synth = app.add_subcommand("synth", "generate a synthetic scenario");
    auto* features = app.add_subcommand("features", "build the feature tensor and the split manifest");
    bool quiet = false;
    auto* train = app.add_subcommand("train", "train the network; writes checkpoint and loss trace");
    train->add_flag("-q,--quiet", quiet, "no per-validation log lines");
    std::string checkpoint;
    auto* predict = app.add_subcommand("predict", "full-grid prediction and difference grid");
    predict->add_option("--checkpoint", checkpoint, "checkpoint to load");
    std::string pred_path, label = "cnn";
    auto* evaluate = app.add_subcommand("evaluate", "metrics against the true bed and the reference");
    evaluate->add_option("--pred", pred_path, "prediction grid (default <out>/prediction.btg)");
    evaluate->add_option("--label", label, "method label in the report");
    std::string method = "both";
    auto* baseline = app.add_subcommand("baseline", "IDW / RBF interpolation baselines");
    baseline->add_option("--method", method, "idw, rbf or both")->check(CLI::IsMember({"idw", "rbf", "both"}));
    double tolerance = 1e-3;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheck->add_option("--tolerance", tolerance, "max relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*synth) return cmd_synth(common);
        if (*features) return cmd_features(common);
        if (*train) return cmd_train(common, quiet);
        if (*predict) return cmd_predict(common, checkpoint);
        if (*evaluate) return cmd_evaluate(common, pred_path, label);
        if (*baseline) return cmd_baseline(common, method);
        if (*gradcheck) return cmd_gradcheck(common, tolerance);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}
