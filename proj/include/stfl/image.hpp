#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stfl/common.hpp"

namespace stfl {

// Dense 2-D grayscale intensity field in [0,1], row-major.
struct ImageGrid {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    ImageGrid() = default;
    ImageGrid(int h, int w, double fill = 0.0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
    double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }

    std::size_t size() const { return pixels.size(); }

    // Border-clamped lookup, used by resampling code.
    double at_clamped(int r, int c) const {
        if (r < 0) r = 0;
        if (r >= height) r = height - 1;
        if (c < 0) c = 0;
        if (c >= width) c = width - 1;
        return at(r, c);
    }

    void validate(const std::string& where) const {
        if (pixels.size() != static_cast<std::size_t>(height) * width)
            throw ShapeError(where + ": pixel count does not match height*width");
        for (double v : pixels) {
            if (!std::isfinite(v)) throw NumericFault(where + ": non-finite pixel");
            if (v < 0.0 || v > 1.0) throw NumericFault(where + ": pixel outside [0,1]");
        }
    }
};

// Binary segmentation mask, same shape as its paired ImageGrid.
struct SegMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    SegMask() = default;
    SegMask(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }

    std::size_t size() const { return pixels.size(); }

    std::size_t foreground_count() const {
        std::size_t n = 0;
        for (auto v : pixels) n += (v != 0);
        return n;
    }

    void validate(const std::string& where) const {
        if (pixels.size() != static_cast<std::size_t>(height) * width)
            throw ShapeError(where + ": pixel count does not match height*width");
        for (auto v : pixels)
            if (v > 1) throw NumericFault(where + ": mask pixel not in {0,1}");
    }
};

inline bool same_shape(const ImageGrid& a, const ImageGrid& b) {
    return a.height == b.height && a.width == b.width;
}

inline bool same_shape(const ImageGrid& a, const SegMask& b) {
    return a.height == b.height && a.width == b.width;
}

inline bool same_shape(const SegMask& a, const SegMask& b) {
    return a.height == b.height && a.width == b.width;
}

std::uint64_t digest(const ImageGrid& img);
std::uint64_t digest(const SegMask& mask);

}  // namespace stfl
