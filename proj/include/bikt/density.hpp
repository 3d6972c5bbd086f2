#pragma once

#include <string>
#include <vector>

#include "bikt/grid.hpp"
#include "bikt/scene.hpp"

namespace bikt {

/// Dense map of non-negative per-pixel density; its sum is the crowd count.
using DensityMap = Grid;

enum class KernelMode { Fixed, Adaptive };

struct KernelSpec {
    KernelMode mode = KernelMode::Fixed;
    double fixed_sigma = 2.0;
    double beta = 0.3;
    int neighbor_count = 3;
    double truncation_radius_sigmas = 4.0;
    bool renormalize_clipped = true;

    void validate() const;
    /// Stable textual identity of the kernel rule; stored in checkpoints so a
    /// model is only paired with density maps built by the same rule.
    std::string fingerprint() const;
    /// Side of the square that holds one truncated kernel of the fixed
    /// sigma (odd, 2*ceil(truncation*sigma)+1).
    int support_window() const;
};

/// sigma_j = beta * mean distance to the `neighbor_count` nearest other
/// points (fewer when not available); a lone point gets `fixed_sigma`.
std::vector<double> compute_adaptive_sigmas(const PointSet& points, const KernelSpec& spec);

/// Per-point Gaussian bandwidths under `spec` (fixed or adaptive).
std::vector<double> kernel_sigmas(const PointSet& points, const KernelSpec& spec);

/// Rasterizes one unit-mass Gaussian per point onto the pixel grid.
DensityMap det_to_reg(const PointSet& points, int height, int width, const KernelSpec& spec);

/// Same as det_to_reg but with caller-supplied bandwidths.
DensityMap rasterize_kernels(const PointSet& points, const std::vector<double>& sigmas, int height, int width,
                             const KernelSpec& spec);

double density_count(const DensityMap& map);

}  // namespace bikt
