#pragma once

#include <cstddef>
#include <vector>

namespace diffsos {

/// Row-major 2D grid of doubles.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

    double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
    double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
    std::size_t size() const { return pixels.size(); }
    bool same_extent(const Image& o) const { return height == o.height && width == o.width; }
};

} // namespace diffsos
