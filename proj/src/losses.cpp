#include "bikt/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace bikt {

void FocalSpec::validate() const {
    if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
    if (!(alpha_pos > 0.0)) throw std::invalid_argument("alpha_pos must be > 0");
    if (!(alpha_neg > 0.0)) throw std::invalid_argument("alpha_neg must be > 0");
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Grid sigmoid(const Grid& x) {
    Grid out = x;
    for (auto& v : out.values()) v = sigmoid(v);
    return out;
}

double mse_loss(const Grid& pred, const Grid& target, Grid* grad) {
    require_same_shape(pred, target, "mse_loss");
    const double n = static_cast<double>(pred.size());
    double total = 0.0;
    if (grad) *grad = Grid(pred.height(), pred.width());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = target[i] - pred[i];
        total += r * r;
        if (grad) (*grad)[i] = -2.0 * r / n;
    }
    return total / n;
}

double focal_mse_loss(const Grid& pred, const Grid& target, const FocalSpec& spec, Grid* grad) {
    require_same_shape(pred, target, "focal_mse_loss");
    const double n = static_cast<double>(pred.size());
    const double g = spec.gamma;
    double total = 0.0;
    if (grad) *grad = Grid(pred.height(), pred.width());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double x = pred[i];
        const double r = target[i] - x;
        const double s = sigmoid(x);
        const bool positive = target[i] >= 0.5;
        const double alpha = positive ? spec.alpha_pos : spec.alpha_neg;
        // q = 1 - p_i, dq/dx = -s(1-s) on positives and +s(1-s) otherwise
        const double q = positive ? 1.0 - s : s;
        const double dq = (positive ? -1.0 : 1.0) * s * (1.0 - s);
        const double mod = g == 0.0 ? 1.0 : std::pow(q, g);
        total += alpha * mod * r * r;
        if (grad) {
            double d = -2.0 * r * mod;
            if (g != 0.0) d += g * std::pow(q, g - 1.0) * dq * r * r;
            (*grad)[i] = alpha * d / n;
        }
    }
    return total / n;
}

namespace {

/// Truncated, renormalized, dilated 1-D Gaussian applied along one axis.
class DilatedGaussian {
public:
    DilatedGaussian(int window, double sigma, int dilation) : dilation_(dilation) {
        const int half = window / 2;
        for (int t = -half; t <= half; ++t) taps_.push_back(std::exp(-(t * t) / (2.0 * sigma * sigma)));
        half_ = half;
    }

    // Along x when `horizontal`, otherwise along y.
    Grid apply(const Grid& in, bool horizontal) const {
        Grid out(in.height(), in.width());
        const int len = horizontal ? in.width() : in.height();
        const auto norms = norm_table(len);
        for (int y = 0; y < in.height(); ++y)
            for (int x = 0; x < in.width(); ++x) {
                const int pos = horizontal ? x : y;
                double acc = 0.0;
                for (int t = -half_; t <= half_; ++t) {
                    const int q = pos + t * dilation_;
                    if (q < 0 || q >= len) continue;
                    acc += taps_[t + half_] * (horizontal ? in.at(y, q) : in.at(q, x));
                }
                out.at(y, x) = acc / norms[pos];
            }
        return out;
    }

    Grid adjoint(const Grid& g, bool horizontal) const {
        Grid out(g.height(), g.width());
        const int len = horizontal ? g.width() : g.height();
        const auto norms = norm_table(len);
        for (int y = 0; y < g.height(); ++y)
            for (int x = 0; x < g.width(); ++x) {
                const int pos = horizontal ? x : y;
                const double v = g.at(y, x) / norms[pos];
                for (int t = -half_; t <= half_; ++t) {
                    const int q = pos + t * dilation_;
                    if (q < 0 || q >= len) continue;
                    (horizontal ? out.at(y, q) : out.at(q, x)) += taps_[t + half_] * v;
                }
            }
        return out;
    }

    Grid filter(const Grid& in) const { return apply(apply(in, true), false); }
    Grid filter_adjoint(const Grid& g) const { return adjoint(adjoint(g, false), true); }

private:
    std::vector<double> norm_table(int len) const {
        std::vector<double> norms(len, 0.0);
        for (int pos = 0; pos < len; ++pos)
            for (int t = -half_; t <= half_; ++t) {
                const int q = pos + t * dilation_;
                if (q >= 0 && q < len) norms[pos] += taps_[t + half_];
            }
        return norms;
    }

    std::vector<double> taps_;
    int half_ = 0;
    int dilation_ = 1;
};

Grid product(const Grid& a, const Grid& b) {
    Grid out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

}  // namespace

double dms_ssim_loss(const Grid& pred, const Grid& target, Grid* grad, const DmsSsimSpec& spec) {
    require_same_shape(pred, target, "dms_ssim_loss");
    if (pred.height() < spec.window || pred.width() < spec.window)
        throw std::invalid_argument("dms_ssim_loss: grid smaller than the " + std::to_string(spec.window) + "x" +
                                    std::to_string(spec.window) + " window");
    if (spec.dilations.empty()) throw std::invalid_argument("dms_ssim_loss: no dilation levels");
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (!std::isfinite(pred[i]) || !std::isfinite(target[i])) {
            if (grad) *grad = Grid(pred.height(), pred.width(), 0.0);
            return std::numeric_limits<double>::quiet_NaN();
        }

    const double n = static_cast<double>(pred.size());
    const double levels = static_cast<double>(spec.dilations.size());
    const Grid xx = product(pred, pred), yy = product(target, target), xy = product(pred, target);
    if (grad) *grad = Grid(pred.height(), pred.width());

    double ssim_total = 0.0;
    for (int dilation : spec.dilations) {
        const DilatedGaussian f(spec.window, spec.sigma, dilation);
        const Grid mx = f.filter(pred), my = f.filter(target);
        const Grid exx = f.filter(xx), eyy = f.filter(yy), exy = f.filter(xy);
        Grid d_mx(pred.height(), pred.width()), d_exx(pred.height(), pred.width()), d_exy(pred.height(), pred.width());
        double level_sum = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double a1 = 2.0 * mx[i] * my[i] + spec.c1;
            const double b1 = mx[i] * mx[i] + my[i] * my[i] + spec.c1;
            const double a2 = 2.0 * (exy[i] - mx[i] * my[i]) + spec.c2;
            const double b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + spec.c2;
            const double s = (a1 * a2) / (b1 * b2);
            level_sum += s;
            if (grad) {
                d_mx[i] = s * (2.0 * my[i] / a1 - 2.0 * mx[i] / b1 - 2.0 * my[i] / a2 + 2.0 * mx[i] / b2);
                d_exx[i] = -s / b2;
                d_exy[i] = 2.0 * s / a2;
            }
        }
        ssim_total += level_sum / n;
        if (grad) {
            const Grid g_mx = f.filter_adjoint(d_mx);
            const Grid g_exx = f.filter_adjoint(d_exx);
            const Grid g_exy = f.filter_adjoint(d_exy);
            const double scale = -1.0 / (levels * n);
            for (std::size_t i = 0; i < pred.size(); ++i)
                (*grad)[i] += scale * (g_mx[i] + 2.0 * pred[i] * g_exx[i] + target[i] * g_exy[i]);
        }
    }
    return 1.0 - ssim_total / levels;
}

double phi_total_loss(const Grid& raw, const Grid& target, const FocalSpec& spec, Grid* grad) {
    Grid g_focal, g_ssim;
    const double focal = focal_mse_loss(raw, target, spec, grad ? &g_focal : nullptr);
    const Grid act = sigmoid(raw);
    const double ssim = dms_ssim_loss(act, target, grad ? &g_ssim : nullptr);
    if (grad) {
        *grad = g_focal;
        for (std::size_t i = 0; i < raw.size(); ++i) (*grad)[i] += g_ssim[i] * act[i] * (1.0 - act[i]);
    }
    return focal + ssim;
}

}  // namespace bikt
