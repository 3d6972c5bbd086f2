#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bikt/checkpoint.hpp"
#include "bikt/grid.hpp"
#include "bikt/nn/layers.hpp"
#include "bikt/scene.hpp"

namespace bikt {

using Tensor = nn::Tensor<float>;
using Param = nn::Parameter<float>;

struct TrainSettings {
    int epochs = 20;
    int batch_size = 4;
    double learning_rate = 1e-3;
    int crop_size = 48;  // square training crops; clamped to the sample size
    std::uint64_t seed = 0;
};

/// Mean training loss per epoch.
struct TrainLog {
    std::vector<double> epoch_loss;
};

/// Raised when a training or fine-tuning step produces a non-finite loss.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Tensor to_tensor(const Grid& grid, double gain = 1.0);
Tensor to_tensor(const ImageGrid& image);
Grid to_grid(const Tensor& t, int channel = 0, double gain = 1.0);

/// True when the `window`-epoch moving average never rises by more than
/// `rel_tolerance` (relative) from one epoch to the next.
bool smoothed_non_increasing(const std::vector<double>& losses, int window = 5, double rel_tolerance = 0.02);

/// FNV-1a hash over all parameter bytes, in order.
std::uint64_t parameter_fingerprint(const std::vector<Param*>& params);

void store_parameters(const std::vector<Param*>& params, Checkpoint& ckpt);
/// Copies values by name; throws CheckpointError on any missing or mis-sized blob.
void load_parameters(const std::vector<Param*>& params, const Checkpoint& ckpt);

/// With `freeze_all_but_tail`, freezes every parameter outside the layers
/// named in `trainable_tail`; otherwise unfreezes everything.
void apply_freeze_mask(const std::vector<Param*>& params, const std::vector<std::string>& trainable_tail,
                       bool freeze_all_but_tail);

}  // namespace bikt
