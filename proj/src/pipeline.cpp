#include "bikt/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace bikt {

namespace fs = std::filesystem;
using nlohmann::json;

RunLock::RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST) throw LockError("run directory " + dir.string() + " is locked by another process");
        throw LockError("cannot create " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"prepare-synth", "train-source", "train-phi",
                                                "transfer",      "evaluate",     "analyze"};
    return names;
}

namespace {

struct Layout {
    fs::path root;
    fs::path data(const std::string& split) const { return root / "data" / split / "annotations.json"; }
    fs::path models() const { return root / "models"; }
    fs::path regressor() const { return models() / "regressor.ckpt"; }
    fs::path detector() const { return models() / "detector.ckpt"; }
    fs::path phi() const { return models() / "phi.ckpt"; }
    fs::path transfer() const { return root / "transfer"; }
    fs::path final_marker() const { return transfer() / "final.json"; }
};

void require_artifact(const fs::path& path, const std::string& stage) {
    if (!fs::exists(path)) throw MissingStageError(stage, path);
}

void write_json(const json& j, const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(1) << '\n';
}

std::vector<AnnotatedScene> load_split(const RunConfig& c, const Layout& layout, const std::string& split,
                                       std::ostream& log) {
    const std::string& configured = split == "source"   ? c.data.source_annotations
                                    : split == "target" ? c.data.target_annotations
                                                        : c.data.probe_annotations;
    const fs::path path = configured.empty() ? layout.data(split) : fs::path(configured);
    require_artifact(path, "prepare-synth");
    std::vector<std::string> warnings;
    auto scenes = load_annotations(path, {.strict = c.strict, .load_images = true}, &warnings);
    for (const auto& w : warnings) log << "warning: " << path.string() << ": " << w << '\n';
    for (auto& s : scenes) s.image = to_grayscale(s.image);
    return scenes;
}

std::vector<AnnotatedScene> load_probe(const RunConfig& c, const Layout& layout, std::ostream& log) {
    if (c.data.probe_annotations.empty() && !fs::exists(layout.data("probe"))) return {};
    return load_split(c, layout, "probe", log);
}

void prepare_synth(const RunConfig& c, const Layout& layout, std::ostream& log) {
    const struct {
        const char* name;
        SyntheticDomain domain;
        int count;
        std::uint64_t salt;
    } splits[] = {{"source", SyntheticDomain::Source, c.data.source_scenes, 10},
                  {"target", SyntheticDomain::Target, c.data.target_scenes, 11},
                  {"probe", SyntheticDomain::Target, c.data.probe_scenes, 12}};
    for (const auto& s : splits) {
        if (s.count == 0) continue;
        auto scenes = make_domain(s.domain, c.data.domain, mix_seed(c.seed, s.salt), static_cast<std::size_t>(s.count));
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            std::ostringstream name;
            name << "images/" << s.name << '_' << std::setw(4) << std::setfill('0') << i << ".png";
            scenes[i].image_path = name.str();
        }
        const fs::path path = layout.data(s.name);
        fs::create_directories(path.parent_path());
        save_annotations(scenes, path);
        log << "wrote " << scenes.size() << " " << s.name << " scenes to " << path.string() << '\n';
    }
}

json log_json(const TrainLog& log) {
    return log.epoch_loss;
}

void train_source(const RunConfig& c, const Layout& layout, std::ostream& log) {
    const auto scenes = load_split(c, layout, "source", log);
    std::vector<RegressionSample> reg;
    std::vector<DetectionSample> det;
    for (const auto& s : scenes) {
        reg.push_back({s.image, det_to_reg(s.truth, s.image.height, s.image.width, c.kernel)});
        det.push_back({s.image, s.truth});
    }
    TrainLog reg_log, det_log;
    RegressionModel r = train_regressor(reg, c.regressor, c.kernel.fingerprint(), &reg_log);
    log << "regressor trained, final loss " << (reg_log.epoch_loss.empty() ? 0.0 : reg_log.epoch_loss.back()) << '\n';
    DetectionModel d = train_detector(det, c.detector, &det_log);
    log << "detector trained, final loss " << (det_log.epoch_loss.empty() ? 0.0 : det_log.epoch_loss.back()) << '\n';
    fs::create_directories(layout.models());
    r.save(layout.regressor());
    d.save(layout.detector());
    write_json({{"regressor_loss", log_json(reg_log)}, {"detector_loss", log_json(det_log)}},
               layout.models() / "train_source.json");
}

void train_phi_stage(const RunConfig& c, const Layout& layout, std::ostream& log) {
    const auto scenes = load_split(c, layout, "source", log);
    const auto n = static_cast<std::size_t>(
        std::max(1.0, std::ceil(c.source_fraction * static_cast<double>(scenes.size()))));
    std::vector<PhiTrainingPair> pairs;
    for (std::size_t i = 0; i < std::min(n, scenes.size()); ++i) {
        const auto& s = scenes[i];
        pairs.emplace_back(det_to_reg(s.truth, s.image.height, s.image.width, c.kernel),
                           points_to_localization(s.truth, s.image.height, s.image.width));
    }
    TrainLog phi_log;
    Reg2DetModel phi = train_phi(pairs, c.phi, c.kernel.fingerprint(), &phi_log);
    log << "phi trained on " << pairs.size() << " scenes, final loss "
        << (phi_log.epoch_loss.empty() ? 0.0 : phi_log.epoch_loss.back()) << '\n';
    fs::create_directories(layout.models());
    phi.save(layout.phi());
    write_json({{"phi_loss", log_json(phi_log)}, {"scenes", pairs.size()}}, layout.models() / "train_phi.json");
}

std::shared_ptr<const Reg2DetModel> load_phi(const RunConfig& c, const Layout& layout) {
    require_artifact(layout.phi(), "train-phi");
    auto phi = std::make_shared<Reg2DetModel>(Reg2DetModel::load(layout.phi()));
    if (phi->kernel_fingerprint != c.kernel.fingerprint())
        throw std::runtime_error("phi checkpoint was trained with kernel " + phi->kernel_fingerprint +
                                 ", config uses " + c.kernel.fingerprint());
    return phi;
}

void transfer_stage(const RunConfig& c, const Layout& layout, std::ostream& log) {
    require_artifact(layout.regressor(), "train-source");
    require_artifact(layout.detector(), "train-source");
    SourceBundle bundle{RegressionModel::load(layout.regressor()), DetectionModel::load(layout.detector()),
                        load_phi(c, layout)};
    std::vector<ImageGrid> images;
    for (auto& s : load_split(c, layout, "target", log)) images.push_back(std::move(s.image));

    fs::remove_all(layout.transfer());
    TransferRunOptions options;
    options.checkpoint_dir = layout.transfer();
    options.probe = load_probe(c, layout, log);
    options.dump_pseudo_labels = true;
    const TransferState state = run_transfer(bundle, images, c.transfer, options);
    for (const auto& r : state.reports)
        log << "cycle " << r.cycle << (r.probe ? ", probe MAE " + std::to_string(r.probe_mae()) : std::string{})
            << '\n';
    write_json({{"cycle", state.cycle}}, layout.final_marker());
}

TransferState load_final_state(const RunConfig& c, const Layout& layout) {
    require_artifact(layout.final_marker(), "transfer");
    std::ifstream in(layout.final_marker());
    const int cycle = json::parse(in).at("cycle").get<int>();
    return load_transfer_state(layout.transfer(), cycle, load_phi(c, layout));
}

void evaluate_stage(const RunConfig& c, const Layout& layout, std::ostream& log) {
    const TransferState state = load_final_state(c, layout);
    const auto probe = load_probe(c, layout, log);
    if (probe.empty()) throw MissingStageError("prepare-synth", layout.data("probe"));
    std::vector<double> pred, truth;
    std::vector<PointSet> points, truths;
    for (const auto& s : probe) {
        const FinalPrediction p = predict_final(state, s.image, c.transfer.fusion);
        pred.push_back(p.count);
        truth.push_back(static_cast<double>(s.truth.size()));
        PointSet ps;
        for (const auto& d : p.detections) {
            ps.points.push_back(d.center);
            ps.scores.push_back(d.score);
        }
        points.push_back(std::move(ps));
        truths.push_back(s.truth);
    }
    const json metrics = metrics_json(count_metrics(pred, truth), localization_map(points, truths));
    write_json(metrics, layout.root / "metrics.json");
    log << "mae " << metrics["mae"].get<double>() << ", mse " << metrics["mse"].get<double>() << ", map "
        << metrics["map"].get<double>() << '\n';
}

void analyze_stage(const RunConfig& c, const Layout& layout, std::ostream& log) {
    require_artifact(layout.regressor(), "train-source");
    require_artifact(layout.detector(), "train-source");
    const RegressionModel reg = RegressionModel::load(layout.regressor());
    const DetectionModel det = DetectionModel::load(layout.detector());
    auto scenes = load_probe(c, layout, log);
    if (scenes.empty()) scenes = load_split(c, layout, "target", log);
    std::vector<DensityMap> reg_maps, det_maps;
    std::vector<PointSet> truths;
    const auto& fusion = c.transfer.fusion;
    for (const auto& s : scenes) {
        reg_maps.push_back(reg.infer(s.image));
        const auto dets = detect(det, s.image, fusion.decode_threshold, fusion.decode_window);
        det_maps.push_back(det_to_reg(to_point_set(dets), s.image.height, s.image.width, c.kernel));
        truths.push_back(s.truth);
    }
    auto rows = patch_error_profile(reg_maps, truths, c.profile_side, "regressor");
    const auto det_rows = patch_error_profile(det_maps, truths, c.profile_side, "detector");
    rows.insert(rows.end(), det_rows.begin(), det_rows.end());
    const fs::path path = layout.root / "analysis" / "patch_errors.csv";
    write_profile_csv(rows, path);
    log << "wrote " << rows.size() << " rows to " << path.string() << '\n';
}

}  // namespace

void execute_command(const std::string& name, const RunConfig& config, std::ostream& log) {
    const auto& names = command_names();
    if (std::find(names.begin(), names.end(), name) == names.end())
        throw std::invalid_argument("unknown command: " + name);
    const Layout layout{config.out_dir()};
    RunLock lock(layout.root);
    write_json(config_to_json(config), layout.root / "config" / (name + ".json"));
    if (name == "prepare-synth")
        prepare_synth(config, layout, log);
    else if (name == "train-source")
        train_source(config, layout, log);
    else if (name == "train-phi")
        train_phi_stage(config, layout, log);
    else if (name == "transfer")
        transfer_stage(config, layout, log);
    else if (name == "evaluate")
        evaluate_stage(config, layout, log);
    else
        analyze_stage(config, layout, log);
}

int run_command(const std::string& name, const RunConfig& config, std::ostream& log, std::ostream& err) {
    json error;
    try {
        execute_command(name, config, log);
        return 0;
    } catch (const MissingStageError& e) {
        error = {{"error", "missing_stage"}, {"stage", e.missing_stage()}, {"message", e.what()}};
    } catch (const LockError& e) {
        error = {{"error", "locked"}, {"message", e.what()}};
    } catch (const ConfigError& e) {
        error = {{"error", "config"}, {"key", e.key()}, {"message", e.what()}};
    } catch (const TrainingError& e) {
        error = {{"error", "training"}, {"message", e.what()}};
    } catch (const std::exception& e) {
        error = {{"error", "failure"}, {"message", e.what()}};
    }
    error["command"] = name;
    err << error.dump() << '\n';
    return 1;
}

}  // namespace bikt
