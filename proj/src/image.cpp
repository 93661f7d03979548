#include "stfl/image.hpp"

namespace stfl {

std::uint64_t digest(const ImageGrid& img) {
    std::uint64_t h = fnv1a64(&img.height, sizeof(img.height));
    h = fnv1a64(&img.width, sizeof(img.width), h);
    return fnv1a64(img.pixels.data(), img.pixels.size() * sizeof(double), h);
}

std::uint64_t digest(const SegMask& mask) {
    std::uint64_t h = fnv1a64(&mask.height, sizeof(mask.height));
    h = fnv1a64(&mask.width, sizeof(mask.width), h);
    return fnv1a64(mask.pixels.data(), mask.pixels.size(), h);
}

}  // namespace stfl
