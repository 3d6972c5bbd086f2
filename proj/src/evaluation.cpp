#include "bikt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace bikt {

CountMetrics count_metrics(const std::vector<double>& pred_counts, const std::vector<double>& true_counts) {
    if (pred_counts.empty()) throw std::invalid_argument("count_metrics: no images");
    if (pred_counts.size() != true_counts.size()) throw std::invalid_argument("count_metrics: length mismatch");
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < pred_counts.size(); ++i) {
        const double e = pred_counts[i] - true_counts[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const double n = static_cast<double>(pred_counts.size());
    return {abs_sum / n, std::sqrt(sq_sum / n), pred_counts.size()};
}

namespace {

double score_of(const PointSet& s, std::size_t i) {
    return s.has_scores() ? s.scores[i] : 1.0;
}

/// (score desc, y, x); true when prediction a ranks ahead of b.
bool ranks_before(const PointSet& s, std::size_t a, std::size_t b) {
    const double sa = score_of(s, a), sb = score_of(s, b);
    if (sa != sb) return sa > sb;
    if (s.points[a].y != s.points[b].y) return s.points[a].y < s.points[b].y;
    if (s.points[a].x != s.points[b].x) return s.points[a].x < s.points[b].x;
    return a < b;
}

}  // namespace

std::vector<bool> match_points(const PointSet& pred, const PointSet& truth, double c) {
    std::vector<bool> tp(pred.size(), false);
    if (truth.empty()) return tp;
    std::vector<std::ptrdiff_t> best(truth.size(), -1);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        std::size_t nearest = 0;
        double nearest_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < truth.size(); ++j) {
            const double d = std::hypot(pred.points[i].x - truth.points[j].x, pred.points[i].y - truth.points[j].y);
            if (d < nearest_d) {
                nearest_d = d;
                nearest = j;
            }
        }
        if (nearest_d > c) continue;
        auto& b = best[nearest];
        if (b < 0 || ranks_before(pred, i, static_cast<std::size_t>(b))) b = static_cast<std::ptrdiff_t>(i);
    }
    for (auto b : best)
        if (b >= 0) tp[static_cast<std::size_t>(b)] = true;
    return tp;
}

double average_precision(const std::vector<PointSet>& preds, const std::vector<PointSet>& truths, double c) {
    if (preds.size() != truths.size()) throw std::invalid_argument("average_precision: length mismatch");
    struct Ranked {
        double score;
        std::size_t image;
        std::size_t index;
        bool tp;
    };
    std::vector<Ranked> all;
    std::size_t total_truth = 0;
    for (std::size_t im = 0; im < preds.size(); ++im) {
        total_truth += truths[im].size();
        const auto labels = match_points(preds[im], truths[im], c);
        for (std::size_t i = 0; i < labels.size(); ++i) all.push_back({score_of(preds[im], i), im, i, labels[i]});
    }
    if (total_truth == 0) return 0.0;
    std::stable_sort(all.begin(), all.end(), [&](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        return ranks_before(preds[a.image], a.index, b.index);
    });

    std::vector<double> precision(all.size()), recall(all.size());
    std::size_t tp = 0;
    for (std::size_t k = 0; k < all.size(); ++k) {
        tp += all[k].tp ? 1 : 0;
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        recall[k] = static_cast<double>(tp) / static_cast<double>(total_truth);
    }
    for (std::size_t k = all.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < all.size(); ++k) {
        ap += (recall[k] - prev_recall) * precision[k];
        prev_recall = recall[k];
    }
    return ap;
}

APCurve localization_map(const std::vector<PointSet>& preds, const std::vector<PointSet>& truths, int c_min,
                         int c_max) {
    if (c_min < 0 || c_max < c_min) throw std::invalid_argument("localization_map: bad c range");
    APCurve curve;
    curve.c_min = c_min;
    const std::size_t total_truth = std::accumulate(truths.begin(), truths.end(), std::size_t{0},
                                                    [](std::size_t acc, const PointSet& s) { return acc + s.size(); });
    curve.undefined = total_truth == 0;
    for (int c = c_min; c <= c_max; ++c) curve.ap.push_back(average_precision(preds, truths, c));
    curve.map = std::accumulate(curve.ap.begin(), curve.ap.end(), 0.0) / static_cast<double>(curve.ap.size());
    return curve;
}

std::vector<PatchErrorRow> patch_error_profile(const std::vector<DensityMap>& pred_density,
                                               const std::vector<PointSet>& truth, int side,
                                               const std::string& model) {
    if (pred_density.size() != truth.size()) throw std::invalid_argument("patch_error_profile: length mismatch");
    if (side < 1) throw std::invalid_argument("patch_error_profile: side must be >= 1");
    std::vector<PatchErrorRow> rows;
    for (std::size_t im = 0; im < pred_density.size(); ++im) {
        const auto& d = pred_density[im];
        for (int py = 0; py + side <= d.height(); py += side)
            for (int px = 0; px + side <= d.width(); px += side) {
                PatchErrorRow row{im, px, py, 0.0, d.crop(px, py, side, side).sum(), model};
                for (const auto& p : truth[im].points) {
                    const int x = static_cast<int>(std::floor(p.x + 0.5)), y = static_cast<int>(std::floor(p.y + 0.5));
                    if (x >= px && x < px + side && y >= py && y < py + side) row.true_count += 1.0;
                }
                rows.push_back(std::move(row));
            }
    }
    return rows;
}

void write_profile_csv(const std::vector<PatchErrorRow>& rows, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(10);
    out << "image_id,patch_x,patch_y,true_count,pred_count,model\n";
    for (const auto& r : rows)
        out << r.image_id << ',' << r.patch_x << ',' << r.patch_y << ',' << r.true_count << ',' << r.pred_count << ','
            << r.model << '\n';
}

nlohmann::json metrics_json(const CountMetrics& counts, const APCurve& curve) {
    nlohmann::json j;
    j["mae"] = counts.mae;
    j["mse"] = counts.mse;
    j["map"] = curve.map;
    j["ap_by_c"] = curve.ap;
    if (curve.undefined) j["map_undefined"] = true;
    return j;
}

}  // namespace bikt
