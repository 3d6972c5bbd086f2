#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bikt/density.hpp"
#include "bikt/models.hpp"

namespace bikt {

/// Per-pixel detector confidence in [0,1]; zero away from every detection.
using ConfidenceWeightMap = Grid;

/// Each detection paints its score over the k x k square centered on its
/// (rounded) center; overlaps keep the maximum.
ConfidenceWeightMap build_weight_map(const std::vector<Detection>& detections, int height, int width, int k);

/// (1 - W) * reg + W * det_density, pixelwise.
DensityMap fuse_density(const DensityMap& reg, const DensityMap& det_density, const ConfidenceWeightMap& weights);

/// Greedy suppression by Euclidean distance. Order: score descending, then
/// smaller y, then smaller x. Survivors are returned in that order.
std::vector<Detection> nms(const std::vector<Detection>& detections, double radius);

/// Union of detector output and Phi points (the latter with placeholder
/// scale 0), followed by nms.
std::vector<Detection> fuse_detections(const std::vector<Detection>& from_detector, const PointSet& from_phi,
                                       double radius);

struct ScaleRestoreSpec {
    double beta_s = 1.0;
    int neighbor_count = 3;
    double default_scale = 4.0;  // used when nothing else is available
};

/// Fills placeholder scales. Lower half (y >= height/2): scale of the nearest
/// original detection. Upper half: beta_s times the mean distance to the
/// nearest fused neighbors. A lone point takes the median original scale.
std::vector<Detection> restore_scales(const std::vector<Detection>& fused, const std::vector<Detection>& original,
                                      int height, const ScaleRestoreSpec& spec = {});

struct Window {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;
    friend bool operator==(const Window&, const Window&) = default;
};

/// Non-overlapping side x side tiles in row-major order. Images smaller than
/// `side` on either axis yield one window spanning that axis.
std::vector<Window> tile_windows(int height, int width, int side);

/// True when `p` rounds to a pixel inside `w`.
bool contains(const Window& w, const Point& p);

enum class PatchPolicy { Percentile, Random };

struct DensityPatch {
    Window window;
    DensityMap label;
};

struct DetectionPatch {
    Window window;
    std::vector<Detection> label;  // centers relative to the window origin
    double mean_score = 0.0;
};

/// Percentile policy: windows ranked by density sum ascending (ties
/// row-major) with rank percentile (r-1)/(n-1); the pool is the windows in
/// [low, high] percent, widened by closest percentile when it holds fewer
/// than `count`. `count` windows are drawn from the pool without replacement.
/// Random policy: `count` windows drawn from all tiles.
std::vector<DensityPatch> sample_regression_patches(const DensityMap& fused_density, int count, int side,
                                                    std::uint64_t seed, PatchPolicy policy = PatchPolicy::Percentile,
                                                    double low_percent = 50.0, double high_percent = 70.0);

/// The `count` windows with the highest mean detection score (empty windows
/// are never chosen; ties row-major).
std::vector<DetectionPatch> sample_detection_patches(const std::vector<Detection>& fused, int height, int width,
                                                     int count, int side);

struct FusionSpec {
    KernelSpec kernel;
    int weight_window = 0;  // k for the weight map; 0 means kernel.support_window()
    double nms_radius = 5.0;
    double decode_threshold = 0.2;
    int decode_window = 10;
    ScaleRestoreSpec scales;
    int patch_count = 2;
    int patch_side = 224;
    PatchPolicy policy = PatchPolicy::Percentile;

    void validate() const;
    int k() const { return weight_window > 0 ? weight_window : kernel.support_window(); }
};

struct PseudoLabels {
    DensityMap fused_density;
    std::vector<Detection> fused_detections;
    std::vector<DensityPatch> reg_patches;
    std::vector<DetectionPatch> det_patches;
};

/// Builds both pseudo labels of one image from the regressor density, the
/// detector output and the Phi response of the regressor density.
PseudoLabels make_pseudo_labels(const DensityMap& reg_density, const std::vector<Detection>& detections,
                                const Grid& phi_response, const FusionSpec& spec, std::uint64_t seed);

/// Writes fused_density.grid, detections.csv (x,y,scale,score) and
/// patches.json into `dir`.
void write_pseudo_labels(const PseudoLabels& labels, const std::filesystem::path& dir);

}  // namespace bikt
