#include "bikt/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace bikt {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

// ---- scalar conversions with strict typing ----

void read_value(const json& j, int& out) {
    if (!j.is_number_integer()) throw std::invalid_argument("expected an integer");
    out = j.get<int>();
}
void read_value(const json& j, std::uint64_t& out) {
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<long long>() < 0))
        throw std::invalid_argument("expected a non-negative integer");
    out = j.get<std::uint64_t>();
}
void read_value(const json& j, double& out) {
    if (!j.is_number()) throw std::invalid_argument("expected a number");
    out = j.get<double>();
}
void read_value(const json& j, bool& out) {
    if (!j.is_boolean()) throw std::invalid_argument("expected true or false");
    out = j.get<bool>();
}
void read_value(const json& j, std::string& out) {
    if (!j.is_string()) throw std::invalid_argument("expected a string");
    out = j.get<std::string>();
}
void read_value(const json& j, std::pair<double, double>& out) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw std::invalid_argument("expected [lo, hi]");
    out = {j[0].get<double>(), j[1].get<double>()};
}
void read_value(const json& j, KernelMode& out) {
    const auto s = j.is_string() ? j.get<std::string>() : "";
    if (s == "fixed")
        out = KernelMode::Fixed;
    else if (s == "adaptive")
        out = KernelMode::Adaptive;
    else
        throw std::invalid_argument("expected \"fixed\" or \"adaptive\"");
}
void read_value(const json& j, PhiLoss& out) {
    const auto s = j.is_string() ? j.get<std::string>() : "";
    if (s == "total")
        out = PhiLoss::Total;
    else if (s == "focal_mse")
        out = PhiLoss::FocalMse;
    else if (s == "mse")
        out = PhiLoss::Mse;
    else
        throw std::invalid_argument("expected \"total\", \"focal_mse\" or \"mse\"");
}
void read_value(const json& j, PatchPolicy& out) {
    const auto s = j.is_string() ? j.get<std::string>() : "";
    if (s == "percentile")
        out = PatchPolicy::Percentile;
    else if (s == "random")
        out = PatchPolicy::Random;
    else
        throw std::invalid_argument("expected \"percentile\" or \"random\"");
}

template <typename T>
json write_value(const T& v) {
    return v;
}
json write_value(const std::pair<double, double>& v) {
    return json::array({v.first, v.second});
}
json write_value(const KernelMode& v) {
    return v == KernelMode::Fixed ? "fixed" : "adaptive";
}
json write_value(const PhiLoss& v) {
    return v == PhiLoss::Total ? "total" : v == PhiLoss::FocalMse ? "focal_mse" : "mse";
}
json write_value(const PatchPolicy& v) {
    return v == PatchPolicy::Percentile ? "percentile" : "random";
}

class Reader {
public:
    Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    template <typename T>
    void field(const char* key, T& out) {
        used_.insert(key);
        const auto it = node_.find(key);
        if (it == node_.end()) return;
        try {
            read_value(*it, out);
        } catch (const std::exception& e) {
            throw ConfigError(join(path_, key), e.what());
        }
    }

    template <typename F>
    void section(const char* key, F&& fn) {
        used_.insert(key);
        const auto it = node_.find(key);
        if (it == node_.end()) return;
        Reader sub(*it, join(path_, key));
        fn(sub);
        sub.finish();
    }

    void finish() const {
        for (const auto& item : node_.items())
            if (!used_.count(item.key())) throw ConfigError(join(path_, item.key()), "unknown key");
    }

private:
    const json& node_;
    std::string path_;
    std::set<std::string> used_;
};

class Writer {
public:
    explicit Writer(json& node) : node_(node) {}

    template <typename T>
    void field(const char* key, const T& v) {
        node_[key] = write_value(v);
    }

    template <typename F>
    void section(const char* key, F&& fn) {
        json sub = json::object();
        Writer w(sub);
        fn(w);
        node_[key] = std::move(sub);
    }

private:
    json& node_;
};

template <typename V>
void visit_train(V& v, TrainSettings& t) {
    v.field("epochs", t.epochs);
    v.field("batch_size", t.batch_size);
    v.field("learning_rate", t.learning_rate);
    v.field("crop_size", t.crop_size);
}

template <typename V>
void visit_transfer(V& v, TransferConfig& t) {
    v.field("cycles", t.cycles);
    v.field("reg_learning_rate", t.reg_learning_rate);
    v.field("det_learning_rate", t.det_learning_rate);
    v.field("freeze_all_but_last_two", t.freeze_all_but_last_two);
    v.field("epochs_per_cycle", t.epochs_per_cycle);
    v.field("batch_size", t.batch_size);
    v.field("ssim_weight", t.ssim_weight);
    v.field("scale_weight", t.scale_weight);
    v.field("early_stop", t.early_stop);
    v.field("weight_window", t.fusion.weight_window);
    v.field("nms_radius", t.fusion.nms_radius);
    v.field("decode_threshold", t.fusion.decode_threshold);
    v.field("decode_window", t.fusion.decode_window);
    v.field("beta_s", t.fusion.scales.beta_s);
    v.field("default_scale", t.fusion.scales.default_scale);
    v.field("patch_count", t.fusion.patch_count);
    v.field("patch_side", t.fusion.patch_side);
    v.field("patch_policy", t.fusion.policy);
}

template <typename V>
void visit(V& v, RunConfig& c) {
    v.field("seed", c.seed);
    v.field("out", c.out);
    v.field("device", c.device);
    v.field("strict", c.strict);
    v.section("data", [&](auto& s) {
        auto& d = c.data.domain;
        s.field("source_scenes", c.data.source_scenes);
        s.field("target_scenes", c.data.target_scenes);
        s.field("probe_scenes", c.data.probe_scenes);
        s.field("source_annotations", c.data.source_annotations);
        s.field("target_annotations", c.data.target_annotations);
        s.field("probe_annotations", c.data.probe_annotations);
        s.field("height", d.height);
        s.field("width", d.width);
        s.field("sparse_intensity", d.sparse_intensity);
        s.field("source_cluster_intensity", d.source_cluster_intensity);
        s.field("source_cluster_std", d.source_cluster_std);
        s.field("dense_head_scale", d.dense_head_scale);
        s.field("dense_intensity", d.dense_intensity);
        s.field("dense_cluster_count", d.dense_cluster_count);
        s.field("dense_cluster_std", d.dense_cluster_std);
        s.field("blob_sigma_range", d.blob_sigma_range);
        s.field("source_amplitude", d.source_amplitude);
        s.field("target_amplitude", d.target_amplitude);
        s.field("source_noise", d.source_noise);
        s.field("target_noise", d.target_noise);
    });
    v.section("kernel", [&](auto& s) {
        s.field("mode", c.kernel.mode);
        s.field("fixed_sigma", c.kernel.fixed_sigma);
        s.field("beta", c.kernel.beta);
        s.field("neighbor_count", c.kernel.neighbor_count);
        s.field("truncation_radius_sigmas", c.kernel.truncation_radius_sigmas);
        s.field("renormalize_clipped", c.kernel.renormalize_clipped);
    });
    v.section("focal", [&](auto& s) {
        s.field("gamma", c.focal.gamma);
        s.field("alpha_pos", c.focal.alpha_pos);
        s.field("alpha_neg", c.focal.alpha_neg);
    });
    v.section("regressor", [&](auto& s) {
        visit_train(s, c.regressor.train);
        s.field("width", c.regressor.arch.width);
        s.field("output_gain", c.regressor.arch.output_gain);
        s.field("ssim_weight", c.regressor.ssim_weight);
    });
    v.section("detector", [&](auto& s) {
        visit_train(s, c.detector.train);
        s.field("width", c.detector.arch.width);
        s.field("heatmap_sigma", c.detector.arch.heatmap_sigma);
        s.field("scale_weight", c.detector.scale_weight);
    });
    v.section("phi", [&](auto& s) {
        visit_train(s, c.phi.train);
        s.field("base_channels", c.phi.arch.base_channels);
        s.field("input_gain", c.phi.arch.input_gain);
        s.field("loss", c.phi.loss);
        s.field("source_fraction", c.source_fraction);
    });
    v.section("transfer", [&](auto& s) { visit_transfer(s, c.transfer); });
    v.section("evaluate", [&](auto& s) { s.field("profile_side", c.profile_side); });
}

/// Runs `fn`; a std::invalid_argument whose message starts with a field name
/// becomes a ConfigError on `section.<field>`.
template <typename F>
void check_section(const std::string& section, F&& fn) {
    try {
        fn();
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        throw ConfigError(join(section, msg.substr(0, msg.find(' '))), msg);
    }
}

void require(bool ok, const std::string& key, const std::string& message) {
    if (!ok) throw ConfigError(key, message);
}

void check_train(const std::string& section, const TrainSettings& t) {
    require(t.epochs >= 0, section + ".epochs", "must be >= 0");
    require(t.batch_size >= 1, section + ".batch_size", "must be >= 1");
    require(t.learning_rate > 0.0, section + ".learning_rate", "must be > 0");
    require(t.crop_size >= 11, section + ".crop_size", "must be >= 11");
}

/// Copies the shared sections into the per-stage configs.
void propagate(RunConfig& c) {
    c.detector.focal = c.focal;
    c.phi.focal = c.focal;
    c.transfer.fusion.kernel = c.kernel;
    c.transfer.seed = c.seed;
    c.regressor.train.seed = mix_seed(c.seed, 1);
    c.detector.train.seed = mix_seed(c.seed, 2);
    c.phi.train.seed = mix_seed(c.seed, 3);
}

}  // namespace

void RunConfig::validate() const {
    const auto& d = data.domain;
    require(d.height >= 16, "data.height", "must be >= 16");
    require(d.width >= 16, "data.width", "must be >= 16");
    require(data.source_scenes >= 1, "data.source_scenes", "must be >= 1");
    require(data.target_scenes >= 1, "data.target_scenes", "must be >= 1");
    require(data.probe_scenes >= 0, "data.probe_scenes", "must be >= 0");
    require(d.sparse_intensity >= 0.0, "data.sparse_intensity", "must be >= 0");
    require(d.dense_intensity >= 0.0, "data.dense_intensity", "must be >= 0");
    require(d.source_cluster_intensity >= 0.0, "data.source_cluster_intensity", "must be >= 0");
    require(d.dense_cluster_count > 0.0, "data.dense_cluster_count", "must be > 0");
    require(d.dense_cluster_std > 0.0, "data.dense_cluster_std", "must be > 0");
    require(d.source_cluster_std > 0.0, "data.source_cluster_std", "must be > 0");
    require(d.dense_head_scale > 0.0, "data.dense_head_scale", "must be > 0");
    require(d.blob_sigma_range.first > 0.0 && d.blob_sigma_range.first <= d.blob_sigma_range.second,
            "data.blob_sigma_range", "must satisfy 0 < lo <= hi");
    for (const auto& [key, range] : {std::pair{"data.source_amplitude", d.source_amplitude},
                                     std::pair{"data.target_amplitude", d.target_amplitude}})
        require(range.first >= 0.0 && range.first <= range.second && range.second <= 1.0, key,
                "must satisfy 0 <= lo <= hi <= 1");
    require(d.source_noise >= 0.0, "data.source_noise", "must be >= 0");
    require(d.target_noise >= 0.0, "data.target_noise", "must be >= 0");
    for (const auto& [key, path] : {std::pair{"data.source_annotations", data.source_annotations},
                                    std::pair{"data.target_annotations", data.target_annotations},
                                    std::pair{"data.probe_annotations", data.probe_annotations}})
        require(path.empty() || std::filesystem::exists(path), key, "file not found: " + path);
    require(device == "cpu", "device", "only \"cpu\" is supported");

    check_section("kernel", [&] { kernel.validate(); });
    check_section("focal", [&] { focal.validate(); });
    check_train("regressor", regressor.train);
    require(regressor.arch.width >= 1, "regressor.width", "must be >= 1");
    require(regressor.arch.output_gain > 0.0, "regressor.output_gain", "must be > 0");
    require(regressor.ssim_weight >= 0.0, "regressor.ssim_weight", "must be >= 0");
    check_train("detector", detector.train);
    require(detector.arch.width >= 1, "detector.width", "must be >= 1");
    require(detector.arch.heatmap_sigma > 0.0, "detector.heatmap_sigma", "must be > 0");
    require(detector.scale_weight >= 0.0, "detector.scale_weight", "must be >= 0");
    check_train("phi", phi.train);
    require(phi.arch.base_channels >= 1, "phi.base_channels", "must be >= 1");
    require(phi.arch.input_gain > 0.0, "phi.input_gain", "must be > 0");
    require(source_fraction > 0.0 && source_fraction <= 1.0, "phi.source_fraction", "must lie in (0,1]");
    check_section("transfer", [&] { transfer.validate(); });
    require(profile_side >= 1, "evaluate.profile_side", "must be >= 1");
}

std::filesystem::path RunConfig::out_dir() const {
    if (!out.empty()) return out;
    if (const char* env = std::getenv("BIKT_OUT"); env && *env) return env;
    return "runs";
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    Reader r(j, "");
    visit(r, c);
    r.finish();
    propagate(c);
    return c;
}

json config_to_json(const RunConfig& config) {
    json j = json::object();
    Writer w(j);
    visit(w, const_cast<RunConfig&>(config));  // Writer only reads
    return j;
}

json transfer_config_to_json(const TransferConfig& config) {
    json j = json::object();
    Writer w(j);
    visit_transfer(w, const_cast<TransferConfig&>(config));
    j["seed"] = config.seed;
    j["kernel"] = config.fusion.kernel.fingerprint();
    return j;
}

RunConfig parse_config(const std::optional<std::filesystem::path>& path, const ConfigOverrides& overrides) {
    json j = json::object();
    if (path) {
        std::ifstream in(*path);
        if (!in) throw ConfigError("--config", "cannot open " + path->string());
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
        }
    }
    RunConfig c = config_from_json(j);
    if (overrides.seed) c.seed = *overrides.seed;
    if (overrides.out) c.out = *overrides.out;
    if (overrides.cycles) c.transfer.cycles = *overrides.cycles;
    if (overrides.source_fraction) c.source_fraction = *overrides.source_fraction;
    if (overrides.device) c.device = *overrides.device;
    if (overrides.strict) c.strict = *overrides.strict;
    propagate(c);
    c.validate();
    return c;
}

}  // namespace bikt
