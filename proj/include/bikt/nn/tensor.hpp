#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bikt::nn {

/// Single-sample CHW activation tensor.
template <typename T>
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int channels, int height, int width, T fill = T(0))
        : c(channels), h(height), w(width), data(static_cast<std::size_t>(channels) * height * width, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t size() const { return data.size(); }
    T& at(int ch, int y, int x) { return data[ch * plane() + static_cast<std::size_t>(y) * w + x]; }
    T at(int ch, int y, int x) const { return data[ch * plane() + static_cast<std::size_t>(y) * w + x]; }
    T* channel(int ch) { return data.data() + ch * plane(); }
    const T* channel(int ch) const { return data.data() + ch * plane(); }
    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.h != b.h || a.w != b.w) throw std::invalid_argument("concat: spatial size mismatch");
    Tensor<T> out(a.c + b.c, a.h, a.w);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

/// Splits a gradient w.r.t. a concatenation back into its two parts.
template <typename T>
void split_channels(const Tensor<T>& g, int first_channels, Tensor<T>& ga, Tensor<T>& gb) {
    ga = Tensor<T>(first_channels, g.h, g.w);
    gb = Tensor<T>(g.c - first_channels, g.h, g.w);
    std::copy(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(ga.size()), ga.data.begin());
    std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(ga.size()), g.data.end(), gb.data.begin());
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    if (!dst.same_shape(src)) throw std::invalid_argument("add_into: shape mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace bikt::nn
