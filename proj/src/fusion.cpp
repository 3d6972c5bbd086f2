#include "bikt/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace bikt {

namespace {

int round_px(double v) {
    return static_cast<int>(std::floor(v + 0.5));
}

double distance(const Point& a, const Point& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ConfidenceWeightMap build_weight_map(const std::vector<Detection>& detections, int height, int width, int k) {
    if (k < 1) throw std::invalid_argument("weight window k must be >= 1");
    ConfidenceWeightMap w(height, width, 0.0);
    const int lo = (k - 1) / 2, hi = k / 2;
    for (const auto& d : detections) {
        const double s = std::clamp(d.score, 0.0, 1.0);
        const int cx = round_px(d.center.x), cy = round_px(d.center.y);
        for (int y = std::max(0, cy - lo); y <= std::min(height - 1, cy + hi); ++y)
            for (int x = std::max(0, cx - lo); x <= std::min(width - 1, cx + hi); ++x)
                w.at(y, x) = std::max(w.at(y, x), s);
    }
    return w;
}

DensityMap fuse_density(const DensityMap& reg, const DensityMap& det_density, const ConfidenceWeightMap& weights) {
    require_same_shape(reg, det_density, "fuse_density");
    require_same_shape(reg, weights, "fuse_density weights");
    DensityMap out(reg.height(), reg.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double w = weights[i];
        out[i] = std::max(0.0, (1.0 - w) * reg[i] + w * det_density[i]);
    }
    return out;
}

std::vector<Detection> nms(const std::vector<Detection>& detections, double radius) {
    std::vector<Detection> sorted = detections;
    std::stable_sort(sorted.begin(), sorted.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.center.y != b.center.y) return a.center.y < b.center.y;
        return a.center.x < b.center.x;
    });
    std::vector<Detection> kept;
    for (const auto& d : sorted) {
        const bool close = std::any_of(kept.begin(), kept.end(),
                                       [&](const Detection& k) { return distance(k.center, d.center) <= radius; });
        if (!close) kept.push_back(d);
    }
    return kept;
}

std::vector<Detection> fuse_detections(const std::vector<Detection>& from_detector, const PointSet& from_phi,
                                       double radius) {
    std::vector<Detection> all = from_detector;
    for (std::size_t i = 0; i < from_phi.size(); ++i)
        all.push_back({from_phi.points[i], 0.0, from_phi.has_scores() ? from_phi.scores[i] : 1.0});
    return nms(all, radius);
}

std::vector<Detection> restore_scales(const std::vector<Detection>& fused, const std::vector<Detection>& original,
                                      int height, const ScaleRestoreSpec& spec) {
    std::vector<Detection> out = fused;
    std::vector<const Detection*> scaled;
    std::vector<double> original_scales;
    for (const auto& d : original)
        if (d.scale > 0.0) {
            scaled.push_back(&d);
            original_scales.push_back(d.scale);
        }
    const double lone = original_scales.empty() ? spec.default_scale : median(original_scales);

    auto neighbor_scale = [&](std::size_t i) {
        std::vector<double> dist;
        for (std::size_t j = 0; j < fused.size(); ++j)
            if (j != i) dist.push_back(distance(fused[i].center, fused[j].center));
        if (dist.empty()) return lone;
        const std::size_t n = std::min<std::size_t>(dist.size(), static_cast<std::size_t>(spec.neighbor_count));
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(n), dist.end());
        const double mean = std::accumulate(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(n), 0.0) / n;
        return mean > 0.0 ? spec.beta_s * mean : lone;
    };

    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i].scale > 0.0) continue;
        if (out[i].center.y >= height / 2.0 && !scaled.empty()) {
            const Detection* best = scaled.front();
            for (const auto* d : scaled)
                if (distance(d->center, out[i].center) < distance(best->center, out[i].center)) best = d;
            out[i].scale = best->scale;
        } else {
            out[i].scale = neighbor_scale(i);
        }
    }
    return out;
}

std::vector<Window> tile_windows(int height, int width, int side) {
    if (side < 1) throw std::invalid_argument("patch side must be >= 1");
    const int tw = std::min(side, width), th = std::min(side, height);
    std::vector<Window> out;
    if (tw < 1 || th < 1) return out;
    for (int y = 0; y + th <= height; y += th)
        for (int x = 0; x + tw <= width; x += tw) out.push_back({x, y, tw, th});
    return out;
}

bool contains(const Window& w, const Point& p) {
    const int x = round_px(p.x), y = round_px(p.y);
    return x >= w.x && x < w.x + w.width && y >= w.y && y < w.y + w.height;
}

std::vector<DensityPatch> sample_regression_patches(const DensityMap& fused_density, int count, int side,
                                                    std::uint64_t seed, PatchPolicy policy, double low_percent,
                                                    double high_percent) {
    if (count < 0) throw std::invalid_argument("patch count must be >= 0");
    const auto windows = tile_windows(fused_density.height(), fused_density.width(), side);
    const std::size_t n = windows.size();
    std::vector<std::size_t> chosen;
    if (n <= static_cast<std::size_t>(count)) {
        chosen.resize(n);
        std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    } else {
        std::mt19937_64 rng(seed);
        std::vector<std::size_t> pool;
        if (policy == PatchPolicy::Random) {
            pool.resize(n);
            std::iota(pool.begin(), pool.end(), std::size_t{0});
        } else {
            std::vector<double> sums(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto& w = windows[i];
                sums[i] = fused_density.crop(w.x, w.y, w.width, w.height).sum();
            }
            std::vector<std::size_t> ranked(n);
            std::iota(ranked.begin(), ranked.end(), std::size_t{0});
            std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) { return sums[a] < sums[b]; });
            // distance of each rank's percentile from the band; 0 inside it
            std::vector<std::pair<double, std::size_t>> by_gap;
            for (std::size_t r = 0; r < n; ++r) {
                const double pct = 100.0 * static_cast<double>(r) / static_cast<double>(n - 1);
                const double gap = pct < low_percent ? low_percent - pct : pct > high_percent ? pct - high_percent : 0.0;
                by_gap.emplace_back(gap, r);
            }
            std::stable_sort(by_gap.begin(), by_gap.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
            for (const auto& [gap, r] : by_gap)
                if (gap == 0.0 || pool.size() < static_cast<std::size_t>(count)) pool.push_back(ranked[r]);
            std::sort(pool.begin(), pool.end());
        }
        for (int k = 0; k < count; ++k) {
            const std::size_t j = std::uniform_int_distribution<std::size_t>(k, pool.size() - 1)(rng);
            std::swap(pool[k], pool[j]);
            chosen.push_back(pool[k]);
        }
    }
    std::vector<DensityPatch> out;
    for (std::size_t i : chosen) {
        const auto& w = windows[i];
        out.push_back({w, fused_density.crop(w.x, w.y, w.width, w.height)});
    }
    return out;
}

std::vector<DetectionPatch> sample_detection_patches(const std::vector<Detection>& fused, int height, int width,
                                                     int count, int side) {
    if (count < 0) throw std::invalid_argument("patch count must be >= 0");
    std::vector<DetectionPatch> scored;
    for (const auto& w : tile_windows(height, width, side)) {
        DetectionPatch p{w, {}, 0.0};
        double total = 0.0;
        for (const auto& d : fused)
            if (contains(w, d.center)) {
                Detection local = d;
                local.center.x -= w.x;
                local.center.y -= w.y;
                p.label.push_back(local);
                total += d.score;
            }
        if (p.label.empty()) continue;
        p.mean_score = total / static_cast<double>(p.label.size());
        scored.push_back(std::move(p));
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const DetectionPatch& a, const DetectionPatch& b) { return a.mean_score > b.mean_score; });
    if (scored.size() > static_cast<std::size_t>(count)) scored.resize(static_cast<std::size_t>(count));
    return scored;
}

void FusionSpec::validate() const {
    kernel.validate();
    if (weight_window < 0) throw std::invalid_argument("weight_window must be >= 0");
    if (!(nms_radius >= 0.0)) throw std::invalid_argument("nms_radius must be >= 0");
    if (!(decode_threshold >= 0.0 && decode_threshold < 1.0))
        throw std::invalid_argument("decode_threshold must lie in [0,1)");
    if (decode_window < 1) throw std::invalid_argument("decode_window must be >= 1");
    if (!(scales.beta_s > 0.0)) throw std::invalid_argument("beta_s must be > 0");
    if (patch_count < 0) throw std::invalid_argument("patch_count must be >= 0");
    if (patch_side < 1) throw std::invalid_argument("patch_side must be >= 1");
}

PseudoLabels make_pseudo_labels(const DensityMap& reg_density, const std::vector<Detection>& detections,
                                const Grid& phi_response, const FusionSpec& spec, std::uint64_t seed) {
    require_same_shape(reg_density, phi_response, "make_pseudo_labels");
    const int h = reg_density.height(), w = reg_density.width();
    PseudoLabels out;
    const DensityMap det_density = det_to_reg(to_point_set(detections), h, w, spec.kernel);
    const ConfidenceWeightMap weights = build_weight_map(detections, h, w, spec.k());
    out.fused_density = fuse_density(reg_density, det_density, weights);

    const PointSet phi_points = binarize_and_merge(phi_response, spec.decode_threshold, spec.decode_window);
    out.fused_detections =
        restore_scales(fuse_detections(detections, phi_points, spec.nms_radius), detections, h, spec.scales);

    out.reg_patches = sample_regression_patches(out.fused_density, spec.patch_count, spec.patch_side, seed, spec.policy);
    out.det_patches = sample_detection_patches(out.fused_detections, h, w, spec.patch_count, spec.patch_side);
    return out;
}

void write_pseudo_labels(const PseudoLabels& labels, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_grid(labels.fused_density, dir / "fused_density.grid");

    std::ofstream csv(dir / "detections.csv");
    if (!csv) throw std::runtime_error("cannot write " + (dir / "detections.csv").string());
    csv.precision(17);
    csv << "x,y,scale,score\n";
    for (const auto& d : labels.fused_detections)
        csv << d.center.x << ',' << d.center.y << ',' << d.scale << ',' << d.score << '\n';

    nlohmann::json manifest;
    manifest["regression"] = nlohmann::json::array();
    for (const auto& p : labels.reg_patches)
        manifest["regression"].push_back({{"x", p.window.x},
                                          {"y", p.window.y},
                                          {"width", p.window.width},
                                          {"height", p.window.height},
                                          {"count", p.label.sum()}});
    manifest["detection"] = nlohmann::json::array();
    for (const auto& p : labels.det_patches)
        manifest["detection"].push_back({{"x", p.window.x},
                                         {"y", p.window.y},
                                         {"width", p.window.width},
                                         {"height", p.window.height},
                                         {"detections", p.label.size()},
                                         {"mean_score", p.mean_score}});
    std::ofstream(dir / "patches.json") << manifest.dump(1) << '\n';
}

}  // namespace bikt
