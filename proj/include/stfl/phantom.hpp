#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stfl/image.hpp"

namespace stfl {

// ---------------------------------------------------------------------------
// Noise taxonomy applied per client.
// ---------------------------------------------------------------------------

enum class NoiseKind { clean, inversion, gaussian, contrast_enhanced, mixed };

std::string to_string(NoiseKind kind);
NoiseKind noise_kind_from_string(const std::string& name);

struct NoiseSpec {
    NoiseKind kind = NoiseKind::clean;
    double sigma = 0.1;   // gaussian std in intensity units
    double gamma = 0.5;   // contrast exponent; 1 = identity contrast
    // When false, the mixed pattern applies all three components instead of
    // drawing per-component Bernoulli(0.5) from the seed.
    bool mix_seeded_order = true;

    void validate() const;
    bool is_identity() const;  // clean, or contrast with gamma == 1
};

// ---------------------------------------------------------------------------
// Lung phantom generation. Two low-intensity lung fields on a brighter body
// disc, 1-4 bright lesion blobs inside the lung fields; the mask marks exactly
// the lesion pixels. Deterministic in (seed, resolution, structure_shift).
// ---------------------------------------------------------------------------

std::pair<ImageGrid, SegMask> generate_phantom(std::uint64_t seed, int resolution,
                                               double structure_shift);

namespace detail {
// Same geometry and texture draws as generate_phantom but with the lesion
// rasterization skipped; used by tests to compare lesion pixels against the
// untouched lung background.
ImageGrid generate_phantom_background(std::uint64_t seed, int resolution,
                                      double structure_shift);
}  // namespace detail

// ---------------------------------------------------------------------------
// Noise application.
// ---------------------------------------------------------------------------

ImageGrid apply_noise(const ImageGrid& img, const NoiseSpec& spec, std::uint64_t rng_seed);

// ---------------------------------------------------------------------------
// Random warping. A coarse 4x4 grid of N(0, magnitude^2) displacements is
// bilinearly upsampled to a smooth field, applied with bilinear sampling to
// the image and nearest-neighbor sampling to the mask. Border values are
// clamped.
// ---------------------------------------------------------------------------

struct WarpField {
    int height = 0;
    int width = 0;
    std::vector<double> dy;  // row displacement per pixel
    std::vector<double> dx;  // column displacement per pixel
};

WarpField make_warp_field(int height, int width, std::uint64_t rng_seed, double magnitude);

ImageGrid warp_image(const ImageGrid& img, const WarpField& field);
SegMask warp_mask(const SegMask& mask, const WarpField& field);

std::pair<ImageGrid, SegMask> random_warp(const ImageGrid& img, const SegMask& mask,
                                          std::uint64_t rng_seed, double magnitude);

}  // namespace stfl
