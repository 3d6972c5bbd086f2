#include "bikt/density.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace bikt {

void KernelSpec::validate() const {
    if (mode == KernelMode::Fixed && !(fixed_sigma > 0.0))
        throw std::invalid_argument("fixed_sigma must be > 0");
    if (mode == KernelMode::Adaptive && neighbor_count < 1)
        throw std::invalid_argument("neighbor_count must be >= 1");
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
    if (!(truncation_radius_sigmas > 0.0)) throw std::invalid_argument("truncation_radius_sigmas must be > 0");
}

std::string KernelSpec::fingerprint() const {
    std::ostringstream s;
    s.precision(17);
    if (mode == KernelMode::Fixed)
        s << "fixed;sigma=" << fixed_sigma;
    else
        s << "adaptive;beta=" << beta << ";k=" << neighbor_count << ";fallback=" << fixed_sigma;
    s << ";trunc=" << truncation_radius_sigmas << ";renorm=" << (renormalize_clipped ? 1 : 0);
    return s.str();
}

int KernelSpec::support_window() const {
    return 2 * static_cast<int>(std::ceil(truncation_radius_sigmas * fixed_sigma)) + 1;
}

std::vector<double> compute_adaptive_sigmas(const PointSet& points, const KernelSpec& spec) {
    if (points.empty()) throw std::invalid_argument("compute_adaptive_sigmas: empty point set");
    const std::size_t n = points.size();
    std::vector<double> sigmas(n);
    std::vector<double> dist;
    dist.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        dist.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (i == j) continue;
            dist.push_back(std::hypot(points.points[i].x - points.points[j].x, points.points[i].y - points.points[j].y));
        }
        if (dist.empty()) {
            sigmas[j] = spec.fixed_sigma;
            continue;
        }
        const std::size_t k = std::min<std::size_t>(dist.size(), static_cast<std::size_t>(spec.neighbor_count));
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        double mean = 0.0;
        for (std::size_t i = 0; i < k; ++i) mean += dist[i];
        mean /= static_cast<double>(k);
        sigmas[j] = spec.beta * mean;
        // coincident points would give a zero-width kernel
        if (!(sigmas[j] > 0.0)) sigmas[j] = spec.fixed_sigma;
    }
    return sigmas;
}

std::vector<double> kernel_sigmas(const PointSet& points, const KernelSpec& spec) {
    if (points.empty()) return {};
    if (spec.mode == KernelMode::Adaptive) return compute_adaptive_sigmas(points, spec);
    return std::vector<double>(points.size(), spec.fixed_sigma);
}

DensityMap rasterize_kernels(const PointSet& points, const std::vector<double>& sigmas, int height, int width,
                             const KernelSpec& spec) {
    if (sigmas.size() != points.size()) throw std::invalid_argument("one sigma per point required");
    DensityMap map(height, width, 0.0);
    std::vector<double> patch;
    for (std::size_t j = 0; j < points.size(); ++j) {
        const Point p = points.points[j];
        if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height))
            throw std::out_of_range("det_to_reg: point " + std::to_string(j) + " out of bounds");
        const double sigma = sigmas[j];
        const double radius = spec.truncation_radius_sigmas * sigma;
        const int r = static_cast<int>(std::ceil(radius));
        const int cx = static_cast<int>(std::lround(p.x));
        const int cy = static_cast<int>(std::lround(p.y));
        const int x0 = std::max(0, cx - r), x1 = std::min(width - 1, cx + r);
        const int y0 = std::max(0, cy - r), y1 = std::min(height - 1, cy + r);
        const int pw = x1 - x0 + 1;
        patch.assign(static_cast<std::size_t>(pw) * (y1 - y0 + 1), 0.0);
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        const double norm = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
        const double r2max = radius * radius;
        double mass = 0.0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - p.x, dy = y - p.y;
                const double d2 = dx * dx + dy * dy;
                if (d2 > r2max) continue;
                const double v = norm * std::exp(-d2 * inv2s2);
                patch[static_cast<std::size_t>(y - y0) * pw + (x - x0)] = v;
                mass += v;
            }
        double scale = 1.0;
        if (spec.renormalize_clipped) {
            if (mass > 0.0) {
                scale = 1.0 / mass;
            } else {
                // kernel narrower than a pixel: all mass on the nearest pixel
                patch[static_cast<std::size_t>(std::clamp(cy, y0, y1) - y0) * pw + (std::clamp(cx, x0, x1) - x0)] = 1.0;
            }
        }
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) map.at(y, x) += scale * patch[static_cast<std::size_t>(y - y0) * pw + (x - x0)];
    }
    return map;
}

DensityMap det_to_reg(const PointSet& points, int height, int width, const KernelSpec& spec) {
    spec.validate();
    return rasterize_kernels(points, kernel_sigmas(points, spec), height, width, spec);
}

double density_count(const DensityMap& map) {
    return map.sum();
}

}  // namespace bikt
