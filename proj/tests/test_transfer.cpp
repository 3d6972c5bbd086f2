#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "bikt/transfer.hpp"

namespace fs = std::filesystem;
using namespace bikt;

namespace {

struct World {
    SourceBundle bundle;
    std::vector<ImageGrid> target;
    std::vector<AnnotatedScene> probe;
};

const World& world() {
    static const World w = [] {
        DomainSpec d;
        const auto source = make_domain(SyntheticDomain::Source, d, 21, 24);
        std::vector<RegressionSample> reg;
        std::vector<DetectionSample> det;
        std::vector<PhiTrainingPair> pairs;
        for (const auto& s : source) {
            const auto density = det_to_reg(s.truth, s.image.height, s.image.width, KernelSpec{});
            reg.push_back({s.image, density});
            det.push_back({s.image, s.truth});
            pairs.emplace_back(density, points_to_localization(s.truth, s.image.height, s.image.width));
        }
        RegressorTrainConfig rc;
        rc.train = {.epochs = 20, .batch_size = 4, .learning_rate = 2e-3, .crop_size = 48, .seed = 1};
        DetectorTrainConfig dc;
        dc.train = {.epochs = 20, .batch_size = 4, .learning_rate = 2e-3, .crop_size = 48, .seed = 2};
        PhiTrainConfig pc;
        pc.train = {.epochs = 15, .batch_size = 4, .learning_rate = 2e-3, .crop_size = 48, .seed = 3};
        World out{{train_regressor(reg, rc, KernelSpec{}.fingerprint()), train_detector(det, dc),
                   std::make_shared<const Reg2DetModel>(train_phi(pairs, pc, KernelSpec{}.fingerprint()))},
                  {},
                  make_domain(SyntheticDomain::Target, d, 23, 6)};
        for (const auto& s : make_domain(SyntheticDomain::Target, d, 22, 6)) out.target.push_back(s.image);
        return out;
    }();
    return w;
}

TransferConfig small_config() {
    TransferConfig c;
    c.cycles = 2;
    c.reg_learning_rate = 5e-4;
    c.det_learning_rate = 5e-4;
    c.fusion.patch_side = 32;
    c.seed = 4;
    return c;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("bikt_transfer_" + name);
    fs::remove_all(dir);
    return dir;
}

std::uint64_t fingerprint(RegressionModel m) { return parameter_fingerprint(m.parameters()); }
std::uint64_t fingerprint(DetectionModel m) { return parameter_fingerprint(m.parameters()); }

}  // namespace

TEST(TransferConfig, Validation) {
    TransferConfig c;
    EXPECT_NO_THROW(c.validate());
    c.cycles = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.reg_learning_rate = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(RunCycle, OneCycleEqualsRunTransfer) {
    const auto& w = world();
    auto config = small_config();
    config.cycles = 1;
    const auto state = initial_state(w.bundle);
    const auto one = run_cycle(state, w.target, config);
    const auto full = run_transfer(w.bundle, w.target, config);
    EXPECT_EQ(one.cycle, 1);
    EXPECT_EQ(full.cycle, 1);
    EXPECT_EQ(fingerprint(one.regressor), fingerprint(full.regressor));
    EXPECT_EQ(fingerprint(one.detector), fingerprint(full.detector));
    EXPECT_EQ(one.reports.size(), 1u);
    EXPECT_EQ(one.reports[0].images.size(), w.target.size());
}

TEST(RunCycle, InputStateUntouchedAndTailOnly) {
    const auto& w = world();
    const auto state = initial_state(w.bundle);
    const auto reg_before = fingerprint(state.regressor);
    const auto det_before = fingerprint(state.detector);
    std::vector<PseudoLabels> labels;
    const auto next = run_cycle(state, w.target, small_config(), {}, &labels);
    EXPECT_EQ(fingerprint(state.regressor), reg_before);
    EXPECT_EQ(fingerprint(state.detector), det_before);
    EXPECT_EQ(labels.size(), w.target.size());
    auto before = state.regressor;
    auto after = next.regressor;
    const auto pb = before.parameters();
    const auto pa = after.parameters();
    bool tail_moved = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->name.rfind("tail", 0) == 0)
            tail_moved = tail_moved || pa[i]->value != pb[i]->value;
        else
            EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
    }
    EXPECT_TRUE(tail_moved);
}

TEST(RunCycle, DeterministicGivenSeed) {
    const auto& w = world();
    const auto state = initial_state(w.bundle);
    const auto a = run_cycle(state, w.target, small_config());
    const auto b = run_cycle(state, w.target, small_config());
    EXPECT_EQ(fingerprint(a.regressor), fingerprint(b.regressor));
    EXPECT_EQ(fingerprint(a.detector), fingerprint(b.detector));
}

TEST(RunCycle, DivergenceRaisesAndKeepsState) {
    const auto& w = world();
    const auto state = initial_state(w.bundle);
    auto config = small_config();
    config.reg_learning_rate = 1e30;
    config.det_learning_rate = 1e30;
    config.epochs_per_cycle = 3;
    EXPECT_THROW(run_cycle(state, w.target, config), TrainingError);
    EXPECT_EQ(state.cycle, 0);
}

TEST(RunCycle, EmptyTargetThrows) {
    EXPECT_THROW(run_cycle(initial_state(world().bundle), {}, small_config()), std::invalid_argument);
}

TEST(RunTransfer, CheckpointsAndResume) {
    const auto& w = world();
    const auto dir = fresh_dir("ckpt");
    TransferRunOptions opts;
    opts.checkpoint_dir = dir;
    opts.probe = w.probe;
    opts.dump_pseudo_labels = true;
    const auto config = small_config();
    const auto state = run_transfer(w.bundle, w.target, config, opts);
    ASSERT_EQ(state.cycle, 2);
    for (int t = 0; t <= 2; ++t) {
        const auto c = dir / ("cycle_" + std::to_string(t));
        EXPECT_TRUE(fs::exists(c / "regressor.ckpt"));
        EXPECT_TRUE(fs::exists(c / "detector.ckpt"));
        EXPECT_TRUE(fs::exists(c / "config.json"));
        EXPECT_TRUE(fs::exists(c / "report.json"));
    }
    EXPECT_TRUE(fs::exists(dir / "cycle_1" / "pseudo" / "image_0" / "patches.json"));

    std::ifstream csv(dir / "metrics.csv");
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "cycle,reg_mae,reg_mse,det_mae,det_mse,map");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 3);

    const auto loaded = load_transfer_state(dir, 2, w.bundle.phi);
    EXPECT_EQ(loaded.cycle, 2);
    EXPECT_EQ(loaded.reports.size(), 2u);
    EXPECT_EQ(fingerprint(loaded.regressor), fingerprint(state.regressor));
    ASSERT_TRUE(loaded.reports[1].probe.has_value());
    EXPECT_DOUBLE_EQ(loaded.reports[1].probe_mae(), state.reports[1].probe_mae());

    // resuming from cycle 1 reproduces cycle 2
    auto resumed = load_transfer_state(dir, 1, w.bundle.phi);
    resumed = continue_transfer(std::move(resumed), w.target, config);
    EXPECT_EQ(resumed.cycle, 2);
    EXPECT_EQ(fingerprint(resumed.regressor), fingerprint(state.regressor));
    EXPECT_EQ(fingerprint(resumed.detector), fingerprint(state.detector));
}

TEST(ReportJson, RoundTrip) {
    CycleReport r;
    r.cycle = 3;
    r.images.push_back({12.5, 9, 2, 1});
    r.probe = ProbeMetrics{{1.5, 2.0, 4}, {2.5, 3.0, 4}, {1.0, 1.2, 4}, 0.4};
    r.seconds = 1.25;
    const auto back = report_from_json(to_json(r));
    EXPECT_EQ(back.cycle, 3);
    ASSERT_EQ(back.images.size(), 1u);
    EXPECT_EQ(back.images[0].fused_detections, 9u);
    ASSERT_TRUE(back.probe.has_value());
    EXPECT_EQ(back.probe->det.mse, 3.0);
    EXPECT_EQ(back.probe_mae(), 1.5);
    EXPECT_TRUE(std::isnan(CycleReport{}.probe_mae()));
}

TEST(PredictFinal, DeterministicAndConsistent) {
    const auto& w = world();
    const auto state = initial_state(w.bundle);
    const FusionSpec fusion;
    for (const auto& scene : w.probe) {
        const auto a = predict_final(state, scene.image, fusion);
        const auto b = predict_final(state, scene.image, fusion);
        EXPECT_EQ(a.count, b.count);
        ASSERT_EQ(a.detections.size(), b.detections.size());
        for (const auto& d : a.detections) {
            EXPECT_GT(d.scale, 0.0);
            EXPECT_GE(d.score, 0.0);
            EXPECT_LE(d.score, 1.0);
        }
        if (scene.domain_tag == "sparse")
            EXPECT_LE(std::abs(a.count - static_cast<double>(a.detections.size())), 0.5 * a.count);
    }
}

TEST(PredictFinal, BlankImage) {
    const auto state = initial_state(world().bundle);
    SceneGenSpec spec;
    spec.intensity = 0;
    spec.noise_std = 0.02;
    const auto blank = generate_synthetic_scene(spec);
    const auto out = predict_final(state, blank.image, FusionSpec{});
    EXPECT_LE(out.count, 2.0);
    EXPECT_LE(out.detections.size(), 1u);
}
