#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <utility>
#include <vector>

#include "bikt/density.hpp"
#include "bikt/losses.hpp"
#include "bikt/network.hpp"

namespace bikt {

/// Binary 0/1 grid marking individual centers.
using LocalizationMap = Grid;
/// Non-negative grid, nonzero only where a scale is defined.
using ScaleMap = Grid;

/// 1 at the pixel nearest to each point, 0 elsewhere.
LocalizationMap points_to_localization(const PointSet& points, int height, int width);

/// Candidates are pixels with response > threshold. Taken in descending
/// response order (ties: row-major), each kept pixel suppresses every
/// remaining candidate whose row and column offsets are both below
/// window/2. Kept pixels become points scored by their response.
PointSet binarize_and_merge(const Grid& response, double threshold = 0.2, int window = 10);

enum class PhiLoss { Total, FocalMse, Mse };

struct Reg2DetArchitecture {
    int base_channels = 8;
    double input_gain = 25.0;  // density is multiplied by this before the first layer
};

/// Density-to-localization encoder-decoder: a four-level U-shaped conv net
/// with skip connections and output stride 1. Inputs whose sides are not
/// multiples of 8 are zero-padded and the output is cropped back.
class Reg2DetModel {
public:
    using Architecture = Reg2DetArchitecture;

    explicit Reg2DetModel(Architecture arch = {}, std::uint64_t seed = 0);
    Reg2DetModel(const Reg2DetModel&) = delete;
    Reg2DetModel& operator=(const Reg2DetModel&) = delete;
    Reg2DetModel(Reg2DetModel&&) noexcept;
    Reg2DetModel& operator=(Reg2DetModel&&) noexcept;
    ~Reg2DetModel();

    /// Raw (pre-sigmoid) response for any input size.
    Grid logits(const DensityMap& density) const;

    /// Training path: input sides must already be multiples of 8.
    Grid forward(const DensityMap& density);
    void backward(const Grid& grad_logits);

    std::vector<Param*> parameters();
    const Architecture& architecture() const { return arch_; }

    FocalSpec focal;
    PhiLoss loss = PhiLoss::Total;
    std::string kernel_fingerprint;

    Checkpoint to_checkpoint();
    static Reg2DetModel from_checkpoint(const Checkpoint& ckpt);
    void save(const std::filesystem::path& path) { write_checkpoint(to_checkpoint(), path); }
    static Reg2DetModel load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

private:
    struct Net;
    Architecture arch_;
    std::unique_ptr<Net> net_;
};

struct PhiTrainConfig {
    TrainSettings train{.epochs = 20, .batch_size = 4, .learning_rate = 1e-5, .crop_size = 48, .seed = 0};
    FocalSpec focal;
    PhiLoss loss = PhiLoss::Total;
    Reg2DetModel::Architecture arch;
};

using PhiTrainingPair = std::pair<DensityMap, LocalizationMap>;

/// Trains the density-to-localization model on ground-truth pairs. Each
/// epoch visits every pair once through a random square crop.
Reg2DetModel train_phi(const std::vector<PhiTrainingPair>& pairs, const PhiTrainConfig& config,
                       const std::string& kernel_fingerprint, TrainLog* log = nullptr);

/// Loss value (and optionally its gradient w.r.t. logits) under `kind`.
double phi_loss(PhiLoss kind, const Grid& logits, const LocalizationMap& target, const FocalSpec& focal,
                Grid* grad = nullptr);

/// Sigmoid-activated response, same shape as the input.
Grid apply_phi(const Reg2DetModel& model, const DensityMap& density);

}  // namespace bikt
