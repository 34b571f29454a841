#include "bedtopo/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bedtopo/error.hpp"

namespace bedtopo {

using nlohmann::json;

namespace {

// Reads known keys out of a JSON object and remembers which ones were never consumed.
class Reader {
public:
    Reader(const json& j, std::string prefix, std::vector<std::string>& unknown)
        : j_(j), prefix_(std::move(prefix)), unknown_(unknown) {
        if (!j_.is_object()) throw ConfigError("'" + where() + "' must be a JSON object");
    }
    ~Reader() = default;

    void finish() {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) unknown_.push_back(prefix_.empty() ? key : prefix_ + "." + key);
    }

    const json* get(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void number(const std::string& key, double& out) {
        if (auto v = get(key)) {
            if (!v->is_number()) throw ConfigError("'" + path(key) + "' must be a number");
            out = v->get<double>();
        }
    }
    void count(const std::string& key, std::size_t& out) {
        if (auto v = get(key)) {
            if (!v->is_number_unsigned()) throw ConfigError("'" + path(key) + "' must be a non-negative integer");
            out = v->get<std::size_t>();
        }
    }
    void seed(const std::string& key, std::uint64_t& out) {
        if (auto v = get(key)) {
            if (!v->is_number_unsigned()) throw ConfigError("'" + path(key) + "' must be a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void flag(const std::string& key, bool& out) {
        if (auto v = get(key)) {
            if (!v->is_boolean()) throw ConfigError("'" + path(key) + "' must be true or false");
            out = v->get<bool>();
        }
    }
    void text(const std::string& key, std::string& out) {
        if (auto v = get(key)) {
            if (!v->is_string()) throw ConfigError("'" + path(key) + "' must be a string");
            out = v->get<std::string>();
        }
    }
    void path_value(const std::string& key, std::filesystem::path& out) {
        std::string s;
        if (get(key)) {
            text(key, s);
            out = s;
        }
    }

    std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

private:
    std::string where() const { return prefix_.empty() ? "<root>" : prefix_; }

    const json& j_;
    std::string prefix_;
    std::vector<std::string>& unknown_;
    std::set<std::string> seen_;
};

}  // namespace

std::string to_string(Protocol p) { return p == Protocol::random_split ? "random-split" : "spatial-bands"; }

Protocol protocol_from_string(const std::string& s) {
    if (s == "random-split") return Protocol::random_split;
    if (s == "spatial-bands") return Protocol::spatial_bands;
    throw ConfigError("unknown protocol '" + s + "' (expected random-split or spatial-bands)");
}

void RunConfig::validate() const {
    if (patch_size == 0) throw ConfigError("patch_size must be positive");
    if (stride == 0 || stride > patch_size) throw ConfigError("stride must satisfy 0 < stride <= patch_size");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
    if (bands < 2) throw ConfigError("bands must be at least 2");
    if (model.filters.size() != nn::ModelConfig::kBlocks)
        throw ConfigError("model.filters must list exactly 5 filter counts");
    for (auto f : model.filters)
        if (f == 0) throw ConfigError("model.filters entries must be positive");
    if (!(model.dropout >= 0.0 && model.dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
    synth.validate();
    train.validate();
    idw.validate();
    rbf.validate();
    if (ssim.window == 0 || !(ssim.sigma > 0.0)) throw ConfigError("metrics.ssim_window and ssim_sigma must be positive");
}

std::filesystem::path RunConfig::resolved_output_dir() const {
    return output_dir.empty() ? default_output_dir() : output_dir;
}

std::filesystem::path RunConfig::resolved_checkpoint() const {
    return checkpoint.empty() ? resolved_output_dir() / "model.btck" : checkpoint;
}

std::filesystem::path default_output_dir() {
    if (const char* env = std::getenv("BEDTOPO_OUTPUT_DIR"); env && *env) return env;
    return "bedtopo_out";
}

RunConfig parse_run_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON configuration: ") + e.what());
    }
    RunConfig cfg;
    std::vector<std::string> unknown;
    Reader root(j, "", unknown);
    root.path_value("scenario_dir", cfg.scenario_dir);
    root.path_value("output_dir", cfg.output_dir);
    root.path_value("checkpoint", cfg.checkpoint);
    root.seed("seed", cfg.seed);
    root.count("patch_size", cfg.patch_size);
    root.count("stride", cfg.stride);
    if (root.get("protocol")) {
        std::string p;
        root.text("protocol", p);
        cfg.protocol = protocol_from_string(p);
    }
    root.number("train_fraction", cfg.train_fraction);
    root.count("bands", cfg.bands);

    if (auto s = root.get("synth")) {
        // Unknown synthetic keys are reported with the rest.
        Reader r(*s, "synth", unknown);
        auto fields = json::parse(synth_params_json(cfg.synth));
        for (auto& [key, value] : fields.items()) {
            if (auto v = r.get(key)) value = *v;
        }
        r.finish();
        try {
            cfg.synth = synth_params_from_json(fields.dump());
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("synth: ") + e.what());
        }
    }
    if (auto f = root.get("features")) {
        Reader r(*f, "features", unknown);
        r.flag("gradients", cfg.features.gradients);
        r.flag("trends", cfg.features.trends);
        r.finish();
    }
    if (auto m = root.get("model")) {
        Reader r(*m, "model", unknown);
        if (auto filters = r.get("filters")) {
            if (!filters->is_array()) throw ConfigError("'model.filters' must be an array");
            cfg.model.filters.clear();
            for (const auto& v : *filters) {
                if (!v.is_number_unsigned()) throw ConfigError("'model.filters' entries must be positive integers");
                cfg.model.filters.push_back(v.get<std::size_t>());
            }
        }
        r.number("dropout", cfg.model.dropout);
        r.number("bn_momentum", cfg.model.bn_momentum);
        r.number("bn_eps", cfg.model.bn_eps);
        r.finish();
    }
    if (auto t = root.get("train")) {
        Reader r(*t, "train", unknown);
        auto& tc = cfg.train;
        r.count("batch_size", tc.batch_size);
        r.count("max_iterations", tc.max_iterations);
        r.count("patience", tc.patience);
        r.number("base_lr", tc.base_lr);
        r.number("max_lr", tc.max_lr);
        r.count("half_period", tc.half_period);
        r.number("beta1", tc.adam.beta1);
        r.number("beta2", tc.adam.beta2);
        r.number("adam_epsilon", tc.adam.epsilon);
        r.flag("use_reference_loss", tc.use_reference_loss);
        r.number("loss_epsilon", tc.loss_epsilon);
        r.count("validation_interval", tc.validation_interval);
        r.flag("epoch_mode", tc.epoch_mode);
        r.finish();
    }
    if (auto b = root.get("idw")) {
        Reader r(*b, "idw", unknown);
        r.count("k", cfg.idw.k);
        r.number("power", cfg.idw.power);
        r.number("threshold", cfg.idw.threshold);
        r.finish();
    }
    if (auto b = root.get("rbf")) {
        Reader r(*b, "rbf", unknown);
        r.number("epsilon", cfg.rbf.epsilon);
        r.number("ridge", cfg.rbf.ridge);
        r.count("max_centers", cfg.rbf.max_centers);
        r.seed("seed", cfg.rbf.seed);
        r.finish();
    }
    if (auto m = root.get("metrics")) {
        Reader r(*m, "metrics", unknown);
        r.count("ssim_window", cfg.ssim.window);
        r.number("ssim_sigma", cfg.ssim.sigma);
        r.number("ssim_k1", cfg.ssim.k1);
        r.number("ssim_k2", cfg.ssim.k2);
        r.finish();
    }
    root.finish();

    if (!unknown.empty()) {
        std::string msg = "unknown configuration key(s):";
        for (const auto& k : unknown) msg += " '" + k + "'";
        throw ConfigError(msg);
    }
    cfg.model.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("configuration file not found: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& c) {
    json j;
    j["scenario_dir"] = c.scenario_dir.string();
    j["output_dir"] = c.output_dir.string();
    j["checkpoint"] = c.checkpoint.string();
    j["seed"] = c.seed;
    j["synth"] = json::parse(synth_params_json(c.synth));
    j["features"] = {{"gradients", c.features.gradients}, {"trends", c.features.trends}};
    j["patch_size"] = c.patch_size;
    j["stride"] = c.stride;
    j["protocol"] = to_string(c.protocol);
    j["train_fraction"] = c.train_fraction;
    j["bands"] = c.bands;
    j["model"] = {{"filters", c.model.filters},
                  {"dropout", c.model.dropout},
                  {"bn_momentum", c.model.bn_momentum},
                  {"bn_eps", c.model.bn_eps}};
    const auto& t = c.train;
    j["train"] = {{"batch_size", t.batch_size},
                  {"max_iterations", t.max_iterations},
                  {"patience", t.patience},
                  {"base_lr", t.base_lr},
                  {"max_lr", t.max_lr},
                  {"half_period", t.half_period},
                  {"beta1", t.adam.beta1},
                  {"beta2", t.adam.beta2},
                  {"adam_epsilon", t.adam.epsilon},
                  {"use_reference_loss", t.use_reference_loss},
                  {"loss_epsilon", t.loss_epsilon},
                  {"validation_interval", t.validation_interval},
                  {"epoch_mode", t.epoch_mode}};
    j["idw"] = {{"k", c.idw.k}, {"power", c.idw.power}, {"threshold", c.idw.threshold}};
    j["rbf"] = {{"epsilon", c.rbf.epsilon},
                {"ridge", c.rbf.ridge},
                {"max_centers", c.rbf.max_centers},
                {"seed", c.rbf.seed}};
    j["metrics"] = {{"ssim_window", c.ssim.window},
                    {"ssim_sigma", c.ssim.sigma},
                    {"ssim_k1", c.ssim.k1},
                    {"ssim_k2", c.ssim.k2}};
    return j.dump(2);
}

}  // namespace bedtopo
