#include "bikt/transfer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "bikt/config.hpp"

namespace bikt {

void TransferConfig::validate() const {
    if (cycles < 1) throw std::invalid_argument("cycles must be >= 1");
    if (!(reg_learning_rate > 0.0)) throw std::invalid_argument("reg_learning_rate must be > 0");
    if (!(det_learning_rate > 0.0)) throw std::invalid_argument("det_learning_rate must be > 0");
    if (epochs_per_cycle < 0) throw std::invalid_argument("epochs_per_cycle must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(ssim_weight >= 0.0)) throw std::invalid_argument("ssim_weight must be >= 0");
    if (!(scale_weight >= 0.0)) throw std::invalid_argument("scale_weight must be >= 0");
    fusion.validate();
}

double CycleReport::probe_mae() const {
    return probe ? probe->reg.mae : std::numeric_limits<double>::quiet_NaN();
}

namespace {

nlohmann::json to_json(const CountMetrics& m) {
    return {{"mae", m.mae}, {"mse", m.mse}, {"n_images", m.n_images}};
}

CountMetrics counts_from_json(const nlohmann::json& j) {
    return {j.at("mae").get<double>(), j.at("mse").get<double>(), j.at("n_images").get<std::size_t>()};
}

PointSet detections_as_points(const std::vector<Detection>& dets) {
    PointSet s;
    for (const auto& d : dets) {
        s.points.push_back(d.center);
        s.scores.push_back(d.score);
    }
    return s;
}

}  // namespace

nlohmann::json to_json(const CycleReport& r) {
    nlohmann::json j;
    j["cycle"] = r.cycle;
    j["seconds"] = r.seconds;
    j["images"] = nlohmann::json::array();
    for (const auto& s : r.images)
        j["images"].push_back({{"fused_count", s.fused_count},
                               {"fused_detections", s.fused_detections},
                               {"reg_patches", s.reg_patches},
                               {"det_patches", s.det_patches}});
    if (r.probe)
        j["probe"] = {{"reg", to_json(r.probe->reg)},
                      {"det", to_json(r.probe->det)},
                      {"fused", to_json(r.probe->fused)},
                      {"map", r.probe->map}};
    return j;
}

CycleReport report_from_json(const nlohmann::json& j) {
    CycleReport r;
    r.cycle = j.at("cycle").get<int>();
    r.seconds = j.value("seconds", 0.0);
    for (const auto& s : j.at("images"))
        r.images.push_back({s.at("fused_count").get<double>(), s.at("fused_detections").get<std::size_t>(),
                            s.at("reg_patches").get<std::size_t>(), s.at("det_patches").get<std::size_t>()});
    if (j.contains("probe")) {
        const auto& p = j.at("probe");
        r.probe = ProbeMetrics{counts_from_json(p.at("reg")), counts_from_json(p.at("det")),
                               counts_from_json(p.at("fused")), p.at("map").get<double>()};
    }
    return r;
}

TransferState initial_state(const SourceBundle& bundle) {
    if (!bundle.phi) throw std::invalid_argument("transfer needs a trained Phi model");
    return {bundle.regressor, bundle.detector, bundle.phi, 0, {}, {}};
}

FinalPrediction predict_final(const TransferState& state, const ImageGrid& image, const FusionSpec& fusion) {
    const DensityMap reg = state.regressor.infer(image);
    const auto dets = detect(state.detector, image, fusion.decode_threshold, fusion.decode_window);
    const DensityMap det_density = det_to_reg(to_point_set(dets), image.height, image.width, fusion.kernel);
    const auto weights = build_weight_map(dets, image.height, image.width, fusion.k());
    FinalPrediction out;
    out.count = density_count(fuse_density(reg, det_density, weights));
    const PointSet phi_points = binarize_and_merge(apply_phi(*state.phi, reg), fusion.decode_threshold,
                                                   fusion.decode_window);
    out.detections =
        restore_scales(fuse_detections(dets, phi_points, fusion.nms_radius), dets, image.height, fusion.scales);
    return out;
}

ProbeMetrics evaluate_probe(const TransferState& state, const std::vector<AnnotatedScene>& probe,
                            const FusionSpec& fusion) {
    if (probe.empty()) throw std::invalid_argument("evaluate_probe: empty probe set");
    std::vector<double> truth, reg, det, fused;
    std::vector<PointSet> det_points, truths;
    for (const auto& scene : probe) {
        truth.push_back(static_cast<double>(scene.truth.size()));
        reg.push_back(density_count(state.regressor.infer(scene.image)));
        const auto dets = detect(state.detector, scene.image, fusion.decode_threshold, fusion.decode_window);
        det.push_back(static_cast<double>(dets.size()));
        det_points.push_back(detections_as_points(dets));
        truths.push_back(scene.truth);
        fused.push_back(predict_final(state, scene.image, fusion).count);
    }
    ProbeMetrics m;
    m.reg = count_metrics(reg, truth);
    m.det = count_metrics(det, truth);
    m.fused = count_metrics(fused, truth);
    m.map = localization_map(det_points, truths).map;
    return m;
}

TransferState run_cycle(const TransferState& state, const std::vector<ImageGrid>& target_images,
                        const TransferConfig& config, const std::vector<AnnotatedScene>& probe,
                        std::vector<PseudoLabels>* labels) {
    if (target_images.empty()) throw std::invalid_argument("run_cycle: empty target set");
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t cycle_seed = mix_seed(config.seed, 1000 + static_cast<std::uint64_t>(state.cycle));

    TransferState next = state;
    CycleReport report;
    report.cycle = state.cycle + 1;

    std::vector<RegressionSample> reg_samples;
    std::vector<DetectionSample> det_samples;
    if (labels) labels->clear();
    for (std::size_t i = 0; i < target_images.size(); ++i) {
        const ImageGrid& image = target_images[i];
        const DensityMap reg = state.regressor.infer(image);
        const auto dets = detect(state.detector, image, config.fusion.decode_threshold, config.fusion.decode_window);
        const Grid phi = apply_phi(*state.phi, reg);
        PseudoLabels pl = make_pseudo_labels(reg, dets, phi, config.fusion, mix_seed(cycle_seed, i));

        for (const auto& p : pl.reg_patches)
            reg_samples.push_back({image.crop(p.window.x, p.window.y, p.window.width, p.window.height), p.label});
        for (const auto& p : pl.det_patches) {
            DetectionSample s{image.crop(p.window.x, p.window.y, p.window.width, p.window.height), {}};
            for (const auto& d : p.label) {
                s.truth.points.push_back(d.center);
                s.truth.scales.push_back(d.scale);
                s.truth.scores.push_back(d.score);
            }
            det_samples.push_back(std::move(s));
        }
        report.images.push_back({density_count(pl.fused_density), pl.fused_detections.size(), pl.reg_patches.size(),
                                 pl.det_patches.size()});
        if (labels) labels->push_back(std::move(pl));
    }

    if (config.epochs_per_cycle > 0) {
        if (!reg_samples.empty()) {
            RegressorTrainConfig rc;
            rc.train = {config.epochs_per_cycle, config.batch_size, config.reg_learning_rate, config.fusion.patch_side,
                        mix_seed(cycle_seed, 101)};
            rc.arch = next.regressor.architecture();
            rc.ssim_weight = config.ssim_weight;
            rc.freeze_all_but_tail = config.freeze_all_but_last_two;
            fit_regressor(next.regressor, reg_samples, rc);
        }
        if (!det_samples.empty()) {
            DetectorTrainConfig dc;
            dc.train = {config.epochs_per_cycle, config.batch_size, config.det_learning_rate, config.fusion.patch_side,
                        mix_seed(cycle_seed, 102)};
            dc.arch = next.detector.architecture();
            dc.focal = next.detector.focal;
            dc.scale_weight = config.scale_weight;
            fit_detector(next.detector, det_samples, dc);
        }
    }

    next.cycle = state.cycle + 1;
    if (!probe.empty()) report.probe = evaluate_probe(next, probe, config.fusion);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    next.reports.push_back(std::move(report));
    return next;
}

void write_metrics_csv(const TransferState& state, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(10);
    out << "cycle,reg_mae,reg_mse,det_mae,det_mse,map\n";
    auto row = [&](const CycleReport& r) {
        if (!r.probe) return;
        out << r.cycle << ',' << r.probe->reg.mae << ',' << r.probe->reg.mse << ',' << r.probe->det.mae << ','
            << r.probe->det.mse << ',' << r.probe->map << '\n';
    };
    row(state.baseline);
    for (const auto& r : state.reports) row(r);
}

namespace {

void persist_cycle(TransferState& state, const TransferConfig& config, const std::filesystem::path& dir) {
    const auto cycle_dir = dir / ("cycle_" + std::to_string(state.cycle));
    std::filesystem::create_directories(cycle_dir);
    state.regressor.save(cycle_dir / "regressor.ckpt");
    state.detector.save(cycle_dir / "detector.ckpt");
    std::ofstream(cycle_dir / "config.json") << transfer_config_to_json(config).dump(1) << '\n';
    const CycleReport& report = state.cycle == 0 ? state.baseline : state.reports.back();
    std::ofstream(cycle_dir / "report.json") << to_json(report).dump(1) << '\n';
    write_metrics_csv(state, dir / "metrics.csv");
}

bool worsened_twice(const TransferState& state) {
    const auto& r = state.reports;
    if (r.size() < 2) return false;
    const double a = r.size() >= 3 ? r[r.size() - 3].probe_mae() : state.baseline.probe_mae();
    const double b = r[r.size() - 2].probe_mae(), c = r.back().probe_mae();
    return std::isfinite(a) && b > a && c > b;
}

}  // namespace

TransferState continue_transfer(TransferState state, const std::vector<ImageGrid>& target_images,
                                const TransferConfig& config, const TransferRunOptions& options) {
    config.validate();
    const int stop = options.max_cycles.value_or(config.cycles);
    while (state.cycle < stop) {
        std::vector<PseudoLabels> labels;
        const int cycle = state.cycle;
        state = run_cycle(state, target_images, config, options.probe, &labels);
        if (!options.checkpoint_dir.empty()) {
            persist_cycle(state, config, options.checkpoint_dir);
            if (options.dump_pseudo_labels) {
                // labels of cycle t are built by the models of cycle t-1
                const auto dir = options.checkpoint_dir / ("cycle_" + std::to_string(cycle + 1)) / "pseudo";
                for (std::size_t i = 0; i < labels.size(); ++i)
                    write_pseudo_labels(labels[i], dir / ("image_" + std::to_string(i)));
            }
        }
        if (config.early_stop && worsened_twice(state)) break;
    }
    return state;
}

TransferState run_transfer(const SourceBundle& bundle, const std::vector<ImageGrid>& target_images,
                           const TransferConfig& config, const TransferRunOptions& options) {
    if (target_images.empty()) throw std::invalid_argument("run_transfer: empty target set");
    config.validate();
    TransferState state = initial_state(bundle);
    if (!options.probe.empty()) state.baseline.probe = evaluate_probe(state, options.probe, config.fusion);
    if (!options.checkpoint_dir.empty()) persist_cycle(state, config, options.checkpoint_dir);
    return continue_transfer(std::move(state), target_images, config, options);
}

TransferState load_transfer_state(const std::filesystem::path& checkpoint_dir, int cycle,
                                  std::shared_ptr<const Reg2DetModel> phi) {
    auto read_report = [&](int t) {
        const auto path = checkpoint_dir / ("cycle_" + std::to_string(t)) / "report.json";
        std::ifstream in(path);
        if (!in) throw std::runtime_error("missing transfer report " + path.string());
        return report_from_json(nlohmann::json::parse(in));
    };
    const auto dir = checkpoint_dir / ("cycle_" + std::to_string(cycle));
    TransferState state{RegressionModel::load(dir / "regressor.ckpt"), DetectionModel::load(dir / "detector.ckpt"),
                        std::move(phi), cycle, read_report(0), {}};
    for (int t = 1; t <= cycle; ++t) state.reports.push_back(read_report(t));
    return state;
}

}  // namespace bikt
