#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bikt {

/// Dense row-major 2-D grid of reals. Backing store for density maps,
/// response maps, localization maps, scale maps and weight maps.
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, double fill = 0.0);
    Grid(int height, int width, std::vector<double> values);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double& at(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    double at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    bool same_shape(const Grid& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    double sum() const;
    double max() const;

    /// Copy of the window [x0, x0+w) x [y0, y0+h); the window must lie inside the grid.
    Grid crop(int x0, int y0, int w, int h) const;

    /// Zero-pads on the bottom/right to (height, width).
    Grid padded(int height, int width) const;

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> values_;
};

/// Throws std::invalid_argument naming `what` when the shapes differ.
void require_same_shape(const Grid& a, const Grid& b, const char* what);

// Grid file: "BIKTGRD1", u32 LE height, u32 LE width, height*width f32 LE row-major.
void write_grid(const Grid& grid, const std::filesystem::path& path);
Grid read_grid(const std::filesystem::path& path);

}  // namespace bikt
