#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "bikt/density.hpp"
#include "bikt/losses.hpp"
#include "bikt/network.hpp"
#include "bikt/reg2det.hpp"

namespace bikt {

struct Detection {
    Point center;
    double scale = 0.0;  // 0 marks a placeholder awaiting restore_scales
    double score = 0.0;
};

PointSet to_point_set(const std::vector<Detection>& detections);

struct RegressorArchitecture {
    int width = 16;
    double output_gain = 25.0;  // the net predicts density * output_gain
};

/// Image-to-density network. A fully convolutional trunk followed by two
/// 1x1 layers (the fine-tuning tail) and a ReLU output, so the map is
/// never negative.
class RegressionModel {
public:
    using Architecture = RegressorArchitecture;

    explicit RegressionModel(Architecture arch = {}, std::uint64_t seed = 0);
    RegressionModel(const RegressionModel& other);
    RegressionModel& operator=(const RegressionModel& other);
    RegressionModel(RegressionModel&&) noexcept;
    RegressionModel& operator=(RegressionModel&&) noexcept;
    ~RegressionModel();

    DensityMap infer(const ImageGrid& image) const;
    /// Training path; returns the scaled density (density * output_gain).
    Grid forward(const ImageGrid& image);
    void backward(const Grid& grad_scaled);

    std::vector<Param*> parameters();
    /// Names of the two final parameterized layers.
    static std::vector<std::string> tail_layers();
    void set_freeze_all_but_tail(bool freeze);

    const Architecture& architecture() const { return arch_; }
    std::string kernel_fingerprint;

    Checkpoint to_checkpoint();
    static RegressionModel from_checkpoint(const Checkpoint& ckpt);
    void save(const std::filesystem::path& path) { write_checkpoint(to_checkpoint(), path); }
    static RegressionModel load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

private:
    struct Net;
    Architecture arch_;
    std::uint64_t seed_ = 0;
    std::unique_ptr<Net> net_;
};

struct DetectorArchitecture {
    int width = 16;
    double heatmap_sigma = 1.0;  // bandwidth of the training heatmap
};

/// Image-to-(center response, scale map) network. The response is the
/// center head's output clamped to [0,1]; the scale head predicts log scale.
class DetectionModel {
public:
    using Architecture = DetectorArchitecture;

    explicit DetectionModel(Architecture arch = {}, std::uint64_t seed = 0);
    DetectionModel(const DetectionModel& other);
    DetectionModel& operator=(const DetectionModel& other);
    DetectionModel(DetectionModel&&) noexcept;
    DetectionModel& operator=(DetectionModel&&) noexcept;
    ~DetectionModel();

    struct Output {
        Grid response;  // in [0,1]
        ScaleMap scale;
    };
    Output infer(const ImageGrid& image) const;

    /// Training path: raw center logits (channel 0) and log scale (channel 1).
    Tensor forward(const ImageGrid& image);
    void backward(const Tensor& grad);

    std::vector<Param*> parameters();
    static std::vector<std::string> tail_layers();
    void set_freeze_all_but_tail(bool freeze);

    const Architecture& architecture() const { return arch_; }
    FocalSpec focal;

    Checkpoint to_checkpoint();
    static DetectionModel from_checkpoint(const Checkpoint& ckpt);
    void save(const std::filesystem::path& path) { write_checkpoint(to_checkpoint(), path); }
    static DetectionModel load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

private:
    struct Net;
    Architecture arch_;
    std::uint64_t seed_ = 0;
    std::unique_ptr<Net> net_;
};

DensityMap regress_density(const RegressionModel& model, const ImageGrid& image);

/// Decodes the center response with binarize_and_merge. Each kept pixel
/// becomes a Detection scored by its response, with the scale map value at
/// that pixel (median positive scale when the value is unusable).
std::vector<Detection> detect(const DetectionModel& model, const ImageGrid& image, double decode_threshold = 0.2,
                              int decode_window = 10);
std::vector<Detection> decode_detections(const DetectionModel::Output& output, double decode_threshold,
                                         int decode_window);

// ---- training ----

struct RegressorTrainConfig {
    TrainSettings train;
    RegressionModel::Architecture arch;
    double ssim_weight = 1.0;
    bool freeze_all_but_tail = false;
};

struct DetectorTrainConfig {
    TrainSettings train;
    DetectionModel::Architecture arch;
    FocalSpec focal;
    double scale_weight = 0.1;
};

/// Regressor training loss on one sample: pixelwise MSE plus DMS-SSIM on
/// the gain-scaled density. Returns the loss, writes d/d(scaled output).
double regressor_loss(const Grid& scaled_pred, const Grid& scaled_target, double ssim_weight, Grid* grad);

/// One square crop of an image and its aligned label grid.
struct RegressionSample {
    ImageGrid image;
    DensityMap target;
};

struct DetectionSample {
    ImageGrid image;
    PointSet truth;  // coordinates relative to the image; scales optional
};

RegressionModel train_regressor(const std::vector<RegressionSample>& samples, const RegressorTrainConfig& config,
                                const std::string& kernel_fingerprint, TrainLog* log = nullptr);

/// Continues training an existing model in place (fine-tuning).
void fit_regressor(RegressionModel& model, const std::vector<RegressionSample>& samples,
                   const RegressorTrainConfig& config, TrainLog* log = nullptr);

DetectionModel train_detector(const std::vector<DetectionSample>& samples, const DetectorTrainConfig& config,
                              TrainLog* log = nullptr);
void fit_detector(DetectionModel& model, const std::vector<DetectionSample>& samples,
                  const DetectorTrainConfig& config, TrainLog* log = nullptr);

/// Heatmap target: a unit-peak Gaussian of `sigma` at each point's nearest
/// pixel; overlaps keep the maximum.
Grid center_heatmap(const PointSet& points, int height, int width, double sigma);

}  // namespace bikt
