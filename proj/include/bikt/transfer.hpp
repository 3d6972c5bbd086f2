#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "bikt/evaluation.hpp"
#include "bikt/fusion.hpp"
#include "bikt/models.hpp"
#include "bikt/reg2det.hpp"

namespace bikt {

struct TransferConfig {
    int cycles = 4;
    double reg_learning_rate = 1e-6;
    double det_learning_rate = 1e-5;
    bool freeze_all_but_last_two = true;
    int epochs_per_cycle = 1;
    int batch_size = 4;
    double ssim_weight = 1.0;
    double scale_weight = 0.1;
    bool early_stop = true;  // stop once probe MAE worsens two cycles in a row
    FusionSpec fusion;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ImageStats {
    double fused_count = 0.0;
    std::size_t fused_detections = 0;
    std::size_t reg_patches = 0;
    std::size_t det_patches = 0;
};

struct ProbeMetrics {
    CountMetrics reg;
    CountMetrics det;    // count = number of detections
    CountMetrics fused;  // predict_final counts
    double map = 0.0;    // detector localization mAP, c = 1..100
};

struct CycleReport {
    int cycle = 0;  // 0 is the source-trained baseline
    std::vector<ImageStats> images;
    std::optional<ProbeMetrics> probe;
    double seconds = 0.0;

    /// Regressor counting MAE on the probe set (NaN without a probe).
    double probe_mae() const;
};

nlohmann::json to_json(const CycleReport& report);
CycleReport report_from_json(const nlohmann::json& j);

struct SourceBundle {
    RegressionModel regressor;
    DetectionModel detector;
    std::shared_ptr<const Reg2DetModel> phi;
};

struct TransferState {
    RegressionModel regressor;
    DetectionModel detector;
    std::shared_ptr<const Reg2DetModel> phi;
    int cycle = 0;
    CycleReport baseline;
    std::vector<CycleReport> reports;  // one per completed cycle
};

TransferState initial_state(const SourceBundle& bundle);

/// Measurement on labelled scenes; never feeds back into pseudo labels.
ProbeMetrics evaluate_probe(const TransferState& state, const std::vector<AnnotatedScene>& probe,
                            const FusionSpec& fusion);

/// Inference, pseudo-label fusion and fine-tuning of both models on the
/// unlabelled target images. Returns the next state; `state` is untouched,
/// so it survives a TrainingError.
TransferState run_cycle(const TransferState& state, const std::vector<ImageGrid>& target_images,
                        const TransferConfig& config, const std::vector<AnnotatedScene>& probe = {},
                        std::vector<PseudoLabels>* labels = nullptr);

struct TransferRunOptions {
    std::filesystem::path checkpoint_dir;  // empty: nothing persisted
    std::vector<AnnotatedScene> probe;
    std::optional<int> max_cycles;  // overrides config.cycles as the stop cycle
    bool dump_pseudo_labels = false;  // cycle_<t>/pseudo/image_<i>/ under checkpoint_dir
};

/// Runs cycles from `state.cycle` up to the configured count. With a
/// checkpoint directory, every cycle writes cycle_<t>/ (models, config,
/// report) and rewrites metrics.csv.
TransferState continue_transfer(TransferState state, const std::vector<ImageGrid>& target_images,
                                const TransferConfig& config, const TransferRunOptions& options = {});

TransferState run_transfer(const SourceBundle& bundle, const std::vector<ImageGrid>& target_images,
                           const TransferConfig& config, const TransferRunOptions& options = {});

/// Restores the state written after cycle `cycle` (0 = baseline).
TransferState load_transfer_state(const std::filesystem::path& checkpoint_dir, int cycle,
                                  std::shared_ptr<const Reg2DetModel> phi);

struct FinalPrediction {
    double count = 0.0;
    std::vector<Detection> detections;
};

FinalPrediction predict_final(const TransferState& state, const ImageGrid& image, const FusionSpec& fusion);

void write_metrics_csv(const TransferState& state, const std::filesystem::path& path);

}  // namespace bikt
