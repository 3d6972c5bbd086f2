#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "bikt/nn/tensor.hpp"

namespace bikt::nn {

template <typename T>
struct Parameter {
    std::string name;
    std::vector<T> value;
    std::vector<T> grad;
    std::vector<T> m;  // Adam first moment
    std::vector<T> v;  // Adam second moment
    bool frozen = false;

    explicit Parameter(std::string n = {}, std::size_t size = 0)
        : name(std::move(n)), value(size, T(0)), grad(size, T(0)), m(size, T(0)), v(size, T(0)) {}

    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// A differentiable stage. `forward` caches what `backward` needs;
/// `infer` is the cache-free const path for frozen models.
template <typename T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor<T> forward(const Tensor<T>& x) = 0;
    virtual Tensor<T> infer(const Tensor<T>& x) const = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
    virtual std::vector<Parameter<T>*> parameters() { return {}; }
};

template <typename T>
class Conv2d final : public Layer<T> {
public:
    using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapMat = Eigen::Map<RowMat>;
    using ConstMapMat = Eigen::Map<const RowMat>;

    Conv2d(std::string name, int in_channels, int out_channels, int kernel, int dilation = 1)
        : in_(in_channels), out_(out_channels), k_(kernel), dil_(dilation), pad_(dilation * (kernel / 2)),
          weight_(name + ".weight", static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
          bias_(name + ".bias", static_cast<std::size_t>(out_channels)) {}

    /// He-normal weights, constant bias.
    void initialize(std::mt19937_64& rng, double bias = 0.0, double gain = 1.0) {
        const double fan_in = static_cast<double>(in_) * k_ * k_;
        std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / fan_in));
        for (auto& w : weight_.value) w = static_cast<T>(dist(rng));
        std::fill(bias_.value.begin(), bias_.value.end(), static_cast<T>(bias));
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        im2col(x, col_);
        in_h_ = x.h;
        in_w_ = x.w;
        return multiply(col_, x.h, x.w);
    }

    Tensor<T> infer(const Tensor<T>& x) const override {
        std::vector<T> col;
        im2col(x, col);
        return multiply(col, x.h, x.w);
    }

    Tensor<T> backward(const Tensor<T>& gy) override {
        const int hw = in_h_ * in_w_;
        const int kk = in_ * k_ * k_;
        ConstMapMat g(gy.data.data(), out_, hw);
        ConstMapMat col(col_.data(), kk, hw);
        MapMat dw(weight_.grad.data(), out_, kk);
        dw.noalias() += g * col.transpose();
        for (int o = 0; o < out_; ++o) bias_.grad[o] += g.row(o).sum();
        ConstMapMat w(weight_.value.data(), out_, kk);
        std::vector<T> dcol(static_cast<std::size_t>(kk) * hw);
        MapMat dc(dcol.data(), kk, hw);
        dc.noalias() = w.transpose() * g;
        Tensor<T> gx(in_, in_h_, in_w_);
        col2im(dcol, gx);
        return gx;
    }

    std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }
    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }

private:
    void check(const Tensor<T>& x) const {
        if (x.c != in_) throw std::invalid_argument("conv: expected " + std::to_string(in_) + " channels");
    }

    void im2col(const Tensor<T>& x, std::vector<T>& col) const {
        check(x);
        const int hw = x.h * x.w;
        col.assign(static_cast<std::size_t>(in_) * k_ * k_ * hw, T(0));
        for (int ci = 0; ci < in_; ++ci)
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    T* row = col.data() + static_cast<std::size_t>((ci * k_ + ky) * k_ + kx) * hw;
                    const int oy = ky * dil_ - pad_;
                    const int ox = kx * dil_ - pad_;
                    const int xs = std::max(0, -ox), xe = std::min(x.w, x.w - ox);
                    for (int y = std::max(0, -oy); y < std::min(x.h, x.h - oy); ++y) {
                        const T* src = x.channel(ci) + static_cast<std::size_t>(y + oy) * x.w + ox;
                        std::copy(src + xs, src + xe, row + static_cast<std::size_t>(y) * x.w + xs);
                    }
                }
    }

    void col2im(const std::vector<T>& col, Tensor<T>& gx) const {
        const int hw = gx.h * gx.w;
        for (int ci = 0; ci < in_; ++ci)
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    const T* row = col.data() + static_cast<std::size_t>((ci * k_ + ky) * k_ + kx) * hw;
                    const int oy = ky * dil_ - pad_;
                    const int ox = kx * dil_ - pad_;
                    const int xs = std::max(0, -ox), xe = std::min(gx.w, gx.w - ox);
                    for (int y = std::max(0, -oy); y < std::min(gx.h, gx.h - oy); ++y) {
                        T* dst = gx.channel(ci) + static_cast<std::size_t>(y + oy) * gx.w + ox;
                        const T* src = row + static_cast<std::size_t>(y) * gx.w;
                        for (int xx = xs; xx < xe; ++xx) dst[xx] += src[xx];
                    }
                }
    }

    Tensor<T> multiply(const std::vector<T>& colv, int h, int w) const {
        const int hw = h * w;
        const int kk = in_ * k_ * k_;
        Tensor<T> y(out_, h, w);
        MapMat out(y.data.data(), out_, hw);
        ConstMapMat col(colv.data(), kk, hw);
        ConstMapMat wm(weight_.value.data(), out_, kk);
        out.noalias() = wm * col;
        for (int o = 0; o < out_; ++o) out.row(o).array() += bias_.value[o];
        return y;
    }

    int in_, out_, k_, dil_, pad_;
    Parameter<T> weight_;
    Parameter<T> bias_;
    std::vector<T> col_;
    int in_h_ = 0, in_w_ = 0;
};

template <typename T>
class ReLU final : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override {
        Tensor<T> y = infer(x);
        mask_.assign(x.size(), 0);
        for (std::size_t i = 0; i < x.size(); ++i) mask_[i] = x.data[i] > T(0);
        return y;
    }
    Tensor<T> infer(const Tensor<T>& x) const override {
        Tensor<T> y = x;
        for (auto& v : y.data) v = std::max(v, T(0));
        return y;
    }
    Tensor<T> backward(const Tensor<T>& g) override {
        Tensor<T> gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (!mask_[i]) gx.data[i] = T(0);
        return gx;
    }

private:
    std::vector<std::uint8_t> mask_;
};

/// 2x2 max pooling, stride 2. Input sides must be even.
template <typename T>
class MaxPool2 final : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override { return pool(x, &argmax_, &shape_); }
    Tensor<T> infer(const Tensor<T>& x) const override { return pool(x, nullptr, nullptr); }
    Tensor<T> backward(const Tensor<T>& g) override {
        Tensor<T> gx(shape_.c, shape_.h, shape_.w);
        for (std::size_t i = 0; i < g.size(); ++i) gx.data[argmax_[i]] += g.data[i];
        return gx;
    }

private:
    static Tensor<T> pool(const Tensor<T>& x, std::vector<std::size_t>* argmax, Tensor<T>* shape) {
        if (x.h % 2 || x.w % 2) throw std::invalid_argument("maxpool: odd input size");
        Tensor<T> y(x.c, x.h / 2, x.w / 2);
        if (argmax) {
            argmax->assign(y.size(), 0);
            *shape = Tensor<T>();
            shape->c = x.c;
            shape->h = x.h;
            shape->w = x.w;
        }
        for (int c = 0; c < x.c; ++c)
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t where = 0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = c * x.plane() + static_cast<std::size_t>(2 * yy + dy) * x.w +
                                                    (2 * xx + dx);
                            if (x.data[idx] > best) {
                                best = x.data[idx];
                                where = idx;
                            }
                        }
                    const std::size_t o = c * y.plane() + static_cast<std::size_t>(yy) * y.w + xx;
                    y.data[o] = best;
                    if (argmax) (*argmax)[o] = where;
                }
        return y;
    }

    std::vector<std::size_t> argmax_;
    Tensor<T> shape_;
};

/// Nearest-neighbour 2x upsampling.
template <typename T>
class Upsample2 final : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override { return infer(x); }
    Tensor<T> infer(const Tensor<T>& x) const override {
        Tensor<T> y(x.c, x.h * 2, x.w * 2);
        for (int c = 0; c < x.c; ++c)
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
        return y;
    }
    Tensor<T> backward(const Tensor<T>& g) override {
        Tensor<T> gx(g.c, g.h / 2, g.w / 2);
        for (int c = 0; c < g.c; ++c)
            for (int yy = 0; yy < g.h; ++yy)
                for (int xx = 0; xx < g.w; ++xx) gx.at(c, yy / 2, xx / 2) += g.at(c, yy, xx);
        return gx;
    }
};

/// Layers applied in order.
template <typename T>
class Sequential final : public Layer<T> {
public:
    template <typename L, typename... Args>
    L& add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        Tensor<T> y = x;
        for (auto& l : layers_) y = l->forward(y);
        return y;
    }
    Tensor<T> infer(const Tensor<T>& x) const override {
        Tensor<T> y = x;
        for (const auto& l : layers_) y = l->infer(y);
        return y;
    }
    Tensor<T> backward(const Tensor<T>& g) override {
        Tensor<T> gx = g;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) gx = (*it)->backward(gx);
        return gx;
    }
    std::vector<Parameter<T>*> parameters() override {
        std::vector<Parameter<T>*> out;
        for (auto& l : layers_)
            for (auto* p : l->parameters()) out.push_back(p);
        return out;
    }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

struct AdamSettings {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam over a fixed parameter list; frozen parameters are skipped.
template <typename T>
class Adam {
public:
    Adam(std::vector<Parameter<T>*> params, AdamSettings settings) : params_(std::move(params)), s_(settings) {}

    void step(double grad_scale = 1.0) {
        ++t_;
        const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
        for (auto* p : params_) {
            if (p->frozen) continue;
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double g = static_cast<double>(p->grad[i]) * grad_scale;
                const double m = s_.beta1 * p->m[i] + (1.0 - s_.beta1) * g;
                const double v = s_.beta2 * p->v[i] + (1.0 - s_.beta2) * g * g;
                p->m[i] = static_cast<T>(m);
                p->v[i] = static_cast<T>(v);
                p->value[i] -= static_cast<T>(s_.learning_rate * (m / c1) / (std::sqrt(v / c2) + s_.epsilon));
            }
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    /// Clears moments and the step counter.
    void reset() {
        t_ = 0;
        for (auto* p : params_) {
            std::fill(p->m.begin(), p->m.end(), T(0));
            std::fill(p->v.begin(), p->v.end(), T(0));
        }
    }

private:
    std::vector<Parameter<T>*> params_;
    AdamSettings s_;
    long t_ = 0;
};

}  // namespace bikt::nn
