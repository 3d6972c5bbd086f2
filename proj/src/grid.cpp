#include "bikt/grid.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace bikt {

namespace {

constexpr std::array<char, 8> kGridMagic = {'B', 'I', 'K', 'T', 'G', 'R', 'D', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("grid file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

Grid::Grid(int height, int width, double fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("grid dimensions must be positive");
    values_.assign(static_cast<std::size_t>(height) * width, fill);
}

Grid::Grid(int height, int width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("grid dimensions must be positive");
    if (values_.size() != static_cast<std::size_t>(height) * width)
        throw std::invalid_argument("grid value count does not match height*width");
}

double Grid::sum() const {
    return std::accumulate(values_.begin(), values_.end(), 0.0);
}

double Grid::max() const {
    if (values_.empty()) return 0.0;
    return *std::max_element(values_.begin(), values_.end());
}

Grid Grid::crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > width_ || y0 + h > height_)
        throw std::out_of_range("crop window outside grid");
    Grid out(h, w);
    for (int y = 0; y < h; ++y)
        std::copy_n(&values_[static_cast<std::size_t>(y0 + y) * width_ + x0], w, &out.at(y, 0));
    return out;
}

Grid Grid::padded(int height, int width) const {
    if (height < height_ || width < width_) throw std::invalid_argument("pad target smaller than grid");
    Grid out(height, width);
    for (int y = 0; y < height_; ++y)
        std::copy_n(&values_[static_cast<std::size_t>(y) * width_], width_, &out.at(y, 0));
    return out;
}

void require_same_shape(const Grid& a, const Grid& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                                    std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                                    std::to_string(b.width()) + ")");
}

void write_grid(const Grid& grid, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write grid file: " + path.string());
    out.write(kGridMagic.data(), kGridMagic.size());
    put_u32(out, static_cast<std::uint32_t>(grid.height()));
    put_u32(out, static_cast<std::uint32_t>(grid.width()));
    for (double v : grid.values()) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        put_u32(out, bits);
    }
    if (!out) throw std::runtime_error("failed writing grid file: " + path.string());
}

Grid read_grid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open grid file: " + path.string());
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kGridMagic)
        throw std::runtime_error("not a grid file (bad magic): " + path.string());
    const auto height = get_u32(in);
    const auto width = get_u32(in);
    if (height == 0 || width == 0 || height > (1u << 20) || width > (1u << 20))
        throw std::runtime_error("grid file has invalid dimensions: " + path.string());
    std::vector<double> values(static_cast<std::size_t>(height) * width);
    for (auto& v : values) v = std::bit_cast<float>(get_u32(in));
    return Grid(static_cast<int>(height), static_cast<int>(width), std::move(values));
}

}  // namespace bikt
