#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bikt/density.hpp"
#include "bikt/scene.hpp"

namespace bikt {

struct CountMetrics {
    double mae = 0.0;
    double mse = 0.0;  // root of the mean squared count error
    std::size_t n_images = 0;
};

CountMetrics count_metrics(const std::vector<double>& pred_counts, const std::vector<double>& true_counts);

/// Per-prediction labels (true = TP) in the order of `pred.points`. A
/// prediction is a candidate for its nearest truth point when within `c`;
/// each truth point keeps its best candidate by (score desc, y, x).
std::vector<bool> match_points(const PointSet& pred, const PointSet& truth, double c);

struct APCurve {
    int c_min = 1;
    std::vector<double> ap;  // ap[i] is the AP at c = c_min + i
    double map = 0.0;
    bool undefined = false;  // no truth points anywhere
};

/// Average precision at one threshold with scores pooled across images.
double average_precision(const std::vector<PointSet>& preds, const std::vector<PointSet>& truths, double c);

APCurve localization_map(const std::vector<PointSet>& preds, const std::vector<PointSet>& truths, int c_min = 1,
                         int c_max = 100);

struct PatchErrorRow {
    std::size_t image_id = 0;
    int patch_x = 0;
    int patch_y = 0;
    double true_count = 0.0;
    double pred_count = 0.0;
    std::string model;

    double signed_error() const { return pred_count - true_count; }
};

/// One row per full side x side tile of each image. `pred_density` and
/// `truth` are aligned per image.
std::vector<PatchErrorRow> patch_error_profile(const std::vector<DensityMap>& pred_density,
                                               const std::vector<PointSet>& truth, int side,
                                               const std::string& model);

void write_profile_csv(const std::vector<PatchErrorRow>& rows, const std::filesystem::path& path);

nlohmann::json metrics_json(const CountMetrics& counts, const APCurve& curve);

}  // namespace bikt
