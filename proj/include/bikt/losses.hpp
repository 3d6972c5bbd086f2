#pragma once

#include <vector>

#include "bikt/grid.hpp"

namespace bikt {

struct FocalSpec {
    double gamma = 2.0;
    double alpha_pos = 1.0;
    double alpha_neg = 0.1;

    void validate() const;
};

/// Dilated multi-scale SSIM settings. Each level filters with the same
/// Gaussian window whose taps are spread by that level's dilation rate.
struct DmsSsimSpec {
    std::vector<int> dilations{1, 2, 3, 4, 5};
    int window = 11;
    double sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

double sigmoid(double x);
Grid sigmoid(const Grid& x);

// Every loss optionally writes d(loss)/d(pred) into `grad` (same shape as pred).

/// (1/N) sum (target - pred)^2
double mse_loss(const Grid& pred, const Grid& target, Grid* grad = nullptr);

/// (1/N) sum alpha_i (1 - p_i)^gamma (target_i - pred_i)^2 with
/// p_i = sigmoid(pred_i) on positives and 1 - sigmoid(pred_i) elsewhere.
/// A pixel is positive when its target is >= 0.5 (exactly the 1-pixels of a
/// binary localization map).
double focal_mse_loss(const Grid& pred, const Grid& target, const FocalSpec& spec, Grid* grad = nullptr);

/// 1 - mean over levels of the mean local SSIM. Windows are truncated at the
/// grid border and renormalized over their in-bounds taps, so any grid at
/// least `window` pixels on each side is accepted. Result lies in [0, 2].
double dms_ssim_loss(const Grid& pred, const Grid& target, Grid* grad = nullptr, const DmsSsimSpec& spec = {});

/// focal_mse_loss(raw) + dms_ssim_loss(sigmoid(raw)).
double phi_total_loss(const Grid& raw, const Grid& target, const FocalSpec& spec, Grid* grad = nullptr);

}  // namespace bikt
