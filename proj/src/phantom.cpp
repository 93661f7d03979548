#include "stfl/phantom.hpp"

#include <algorithm>
#include <cmath>

namespace stfl {

std::string to_string(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::clean: return "clean";
        case NoiseKind::inversion: return "inversion";
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::contrast_enhanced: return "contrast_enhanced";
        case NoiseKind::mixed: return "mixed";
    }
    return "unknown";
}

NoiseKind noise_kind_from_string(const std::string& name) {
    if (name == "clean") return NoiseKind::clean;
    if (name == "inversion") return NoiseKind::inversion;
    if (name == "gaussian") return NoiseKind::gaussian;
    if (name == "contrast_enhanced") return NoiseKind::contrast_enhanced;
    if (name == "mixed") return NoiseKind::mixed;
    throw ConfigError("unknown noise kind \"" + name +
                      "\"; allowed: clean, inversion, gaussian, contrast_enhanced, mixed");
}

void NoiseSpec::validate() const {
    if (sigma < 0.0) throw ConfigError("NoiseSpec: sigma must be >= 0");
    if (gamma <= 0.0) throw ConfigError("NoiseSpec: gamma must be > 0");
    if (sigma == 0.0 &&
        (kind == NoiseKind::gaussian || kind == NoiseKind::mixed))
        throw ConfigError("NoiseSpec: sigma = 0 is only valid for clean, contrast_enhanced or inversion");
}

bool NoiseSpec::is_identity() const {
    if (kind == NoiseKind::clean) return true;
    if (kind == NoiseKind::contrast_enhanced && gamma == 1.0) return true;
    return false;
}

// ---------------------------------------------------------------------------
// Phantom generation
// ---------------------------------------------------------------------------

namespace {

struct EllipseSpec {
    double cy = 0, cx = 0;   // center, in pixels
    double ay = 0, ax = 0;   // semi-axes, in pixels
    double theta = 0;        // rotation

    // squared normalized radius; <= 1 means inside
    double norm_r2(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double c = std::cos(theta), s = std::sin(theta);
        const double u = (c * dx + s * dy) / ax;
        const double v = (-s * dx + c * dy) / ay;
        return u * u + v * v;
    }

    // map lung-normalized coordinates (u,v) in the unit disc to pixel space
    void to_pixel(double u, double v, double& y, double& x) const {
        const double c = std::cos(theta), s = std::sin(theta);
        x = cx + c * (u * ax) - s * (v * ay);
        y = cy + s * (u * ax) + c * (v * ay);
    }
};

struct LesionSpec {
    int lung = 0;            // which lung field
    double cu = 0, cv = 0;   // center in lung-normalized coordinates
    double au = 0, av = 0;   // semi-axes in lung-normalized coordinates
    double amp = 0;          // intensity bump amplitude
};

struct PhantomParams {
    EllipseSpec body;
    EllipseSpec lungs[2];
    double bg_level = 0, body_level = 0, lung_level = 0;
    std::vector<double> texture;  // coarse grid, row-major
    int tex_n = 6;
    std::vector<LesionSpec> lesions;
};

// All random draws happen here so that the lesion-free render consumes the
// identical stream.
PhantomParams draw_params(std::uint64_t seed, int res, double shift) {
    Rng rng(mix_seed(seed, 0x70686e746dULL));
    PhantomParams p;
    const double r = static_cast<double>(res);
    const double wob = 1.0 + 2.0 * shift;  // geometry priors widen with shift

    p.body.cy = r * (0.50 + 0.010 * wob * rng.normal());
    p.body.cx = r * (0.50 + 0.010 * wob * rng.normal());
    p.body.ay = r * 0.400 * (1.0 + 0.030 * wob * rng.normal());
    p.body.ax = r * 0.440 * (1.0 + 0.030 * wob * rng.normal());
    p.body.theta = 0.05 * wob * rng.normal();

    p.bg_level = clamp01(0.05 + 0.010 * rng.normal());
    p.body_level = clamp01(0.68 + 0.030 * rng.normal());
    p.lung_level = clamp01(0.18 + 0.025 * rng.normal());

    for (int i = 0; i < 2; ++i) {
        const double side = (i == 0) ? -1.0 : 1.0;
        EllipseSpec& lung = p.lungs[i];
        lung.cy = r * (0.49 + (0.015 + 0.04 * shift) * rng.normal());
        lung.cx = r * (0.50 + side * 0.185 * (1.0 + 0.05 * wob * rng.normal()));
        lung.ay = r * 0.210 * (1.0 + 0.05 * wob * rng.normal());
        lung.ax = r * 0.130 * (1.0 + 0.05 * wob * rng.normal());
        lung.theta = side * (0.10 + 0.06 * wob * rng.normal());
    }

    p.texture.resize(static_cast<std::size_t>(p.tex_n) * p.tex_n);
    for (auto& t : p.texture) t = 0.02 * rng.normal();

    const int n_lesions = 1 + static_cast<int>(rng.uniform_int(4));
    for (int i = 0; i < n_lesions; ++i) {
        LesionSpec les;
        les.lung = static_cast<int>(rng.uniform_int(2));
        // center within radius 0.50, semi-axes within [0.28, 0.48]: the whole
        // lesion stays inside the lung field
        const double rad = 0.50 * std::sqrt(rng.uniform());
        const double ang = rng.uniform(0.0, 2.0 * M_PI);
        les.cu = rad * std::cos(ang);
        les.cv = rad * std::sin(ang);
        les.au = rng.uniform(0.28, 0.48);
        les.av = rng.uniform(0.28, 0.48);
        les.amp = rng.uniform(0.28, 0.45);
        p.lesions.push_back(les);
    }
    return p;
}

double texture_at(const PhantomParams& p, double y, double x, int res) {
    const int n = p.tex_n;
    const double gy = y / (res - 1) * (n - 1);
    const double gx = x / (res - 1) * (n - 1);
    int iy = std::min(static_cast<int>(gy), n - 2);
    int ix = std::min(static_cast<int>(gx), n - 2);
    const double fy = gy - iy, fx = gx - ix;
    const auto at = [&](int a, int b) { return p.texture[static_cast<std::size_t>(a) * n + b]; };
    return (1 - fy) * ((1 - fx) * at(iy, ix) + fx * at(iy, ix + 1)) +
           fy * ((1 - fx) * at(iy + 1, ix) + fx * at(iy + 1, ix + 1));
}

std::pair<ImageGrid, SegMask> render(const PhantomParams& p, int res, bool with_lesions) {
    ImageGrid img(res, res);
    SegMask mask(res, res);
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            const double fy = y + 0.5, fx = x + 0.5;
            double v = p.bg_level;
            if (p.body.norm_r2(fy, fx) <= 1.0) {
                v = p.body_level + texture_at(p, y, x, res);
                for (int i = 0; i < 2; ++i)
                    if (p.lungs[i].norm_r2(fy, fx) <= 1.0)
                        v = p.lung_level + texture_at(p, y, x, res);
            }
            img.at(y, x) = clamp01(v);
        }
    }
    if (with_lesions) {
        // overlapping lesions take the strongest bump, not the sum
        std::vector<double> bump(static_cast<std::size_t>(res) * res, 0.0);
        for (const LesionSpec& les : p.lesions) {
            const EllipseSpec& lung = p.lungs[les.lung];
            double cy_pix, cx_pix;
            lung.to_pixel(les.cu, les.cv, cy_pix, cx_pix);
            const double reach = std::max(lung.ax, lung.ay) * std::max(les.au, les.av) + 2.0;
            const int y0 = std::max(0, static_cast<int>(cy_pix - reach));
            const int y1 = std::min(res - 1, static_cast<int>(cy_pix + reach) + 1);
            const int x0 = std::max(0, static_cast<int>(cx_pix - reach));
            const int x1 = std::min(res - 1, static_cast<int>(cx_pix + reach) + 1);
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const double fy = y + 0.5, fx = x + 0.5;
                    if (lung.norm_r2(fy, fx) > 1.0) continue;
                    // lesion membership in the lung-normalized frame
                    const double dy = fy - lung.cy, dx = fx - lung.cx;
                    const double c = std::cos(lung.theta), s = std::sin(lung.theta);
                    const double u = (c * dx + s * dy) / lung.ax;
                    const double v = (-s * dx + c * dy) / lung.ay;
                    const double ru = (u - les.cu) / les.au;
                    const double rv = (v - les.cv) / les.av;
                    const double d2 = ru * ru + rv * rv;
                    if (d2 > 1.0) continue;
                    const std::size_t idx = static_cast<std::size_t>(y) * res + x;
                    bump[idx] = std::max(bump[idx], les.amp * (0.25 + 0.75 * (1.0 - d2)));
                    mask.at(y, x) = 1;
                }
            }
        }
        for (std::size_t i = 0; i < bump.size(); ++i)
            if (bump[i] > 0.0) img.pixels[i] = clamp01(img.pixels[i] + bump[i]);
    }
    return {std::move(img), std::move(mask)};
}

}  // namespace

std::pair<ImageGrid, SegMask> generate_phantom(std::uint64_t seed, int resolution,
                                               double structure_shift) {
    if (resolution < 32) throw ConfigError("generate_phantom: resolution must be >= 32");
    PhantomParams p = draw_params(seed, resolution, structure_shift);
    auto out = render(p, resolution, true);
    out.first.validate("generate_phantom");
    out.second.validate("generate_phantom");
    return out;
}

namespace detail {
ImageGrid generate_phantom_background(std::uint64_t seed, int resolution,
                                      double structure_shift) {
    if (resolution < 32) throw ConfigError("generate_phantom: resolution must be >= 32");
    PhantomParams p = draw_params(seed, resolution, structure_shift);
    return render(p, resolution, false).first;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

namespace {

void apply_inversion(ImageGrid& img) {
    for (auto& v : img.pixels) v = 1.0 - v;
}

void apply_gaussian(ImageGrid& img, double sigma, Rng& rng) {
    for (auto& v : img.pixels) v = clamp01(v + rng.normal(0.0, sigma));
}

void apply_contrast(ImageGrid& img, double gamma) {
    if (gamma == 1.0) return;
    for (auto& v : img.pixels) v = std::pow(v, gamma);
}

}  // namespace

ImageGrid apply_noise(const ImageGrid& img, const NoiseSpec& spec, std::uint64_t rng_seed) {
    spec.validate();
    img.validate("apply_noise input");
    ImageGrid out = img;
    Rng rng(mix_seed(rng_seed, 0x6e6f697365ULL));
    switch (spec.kind) {
        case NoiseKind::clean:
            break;
        case NoiseKind::inversion:
            apply_inversion(out);
            break;
        case NoiseKind::gaussian:
            apply_gaussian(out, spec.sigma, rng);
            break;
        case NoiseKind::contrast_enhanced:
            apply_contrast(out, spec.gamma);
            break;
        case NoiseKind::mixed: {
            // fixed composition order: contrast, then gaussian, then inversion
            const bool use_contrast = spec.mix_seeded_order ? rng.uniform() < 0.5 : true;
            const bool use_gaussian = spec.mix_seeded_order ? rng.uniform() < 0.5 : true;
            const bool use_inversion = spec.mix_seeded_order ? rng.uniform() < 0.5 : true;
            if (use_contrast) apply_contrast(out, spec.gamma);
            if (use_gaussian) apply_gaussian(out, spec.sigma, rng);
            if (use_inversion) apply_inversion(out);
            break;
        }
    }
    out.validate("apply_noise output");
    return out;
}

// ---------------------------------------------------------------------------
// Random warping
// ---------------------------------------------------------------------------

WarpField make_warp_field(int height, int width, std::uint64_t rng_seed, double magnitude) {
    if (magnitude < 0.0) throw ConfigError("random_warp: magnitude must be >= 0");
    WarpField f;
    f.height = height;
    f.width = width;
    f.dy.assign(static_cast<std::size_t>(height) * width, 0.0);
    f.dx.assign(static_cast<std::size_t>(height) * width, 0.0);
    if (magnitude == 0.0) return f;

    constexpr int kGrid = 4;
    double cy[kGrid][kGrid], cx[kGrid][kGrid];
    Rng rng(mix_seed(rng_seed, 0x77617270ULL));
    for (int i = 0; i < kGrid; ++i)
        for (int j = 0; j < kGrid; ++j) {
            cy[i][j] = rng.normal(0.0, magnitude);
            cx[i][j] = rng.normal(0.0, magnitude);
        }

    for (int y = 0; y < height; ++y) {
        const double gy = static_cast<double>(y) / (height - 1) * (kGrid - 1);
        int iy = std::min(static_cast<int>(gy), kGrid - 2);
        const double fy = gy - iy;
        for (int x = 0; x < width; ++x) {
            const double gx = static_cast<double>(x) / (width - 1) * (kGrid - 1);
            int ix = std::min(static_cast<int>(gx), kGrid - 2);
            const double fx = gx - ix;
            const std::size_t idx = static_cast<std::size_t>(y) * width + x;
            f.dy[idx] = (1 - fy) * ((1 - fx) * cy[iy][ix] + fx * cy[iy][ix + 1]) +
                        fy * ((1 - fx) * cy[iy + 1][ix] + fx * cy[iy + 1][ix + 1]);
            f.dx[idx] = (1 - fy) * ((1 - fx) * cx[iy][ix] + fx * cx[iy][ix + 1]) +
                        fy * ((1 - fx) * cx[iy + 1][ix] + fx * cx[iy + 1][ix + 1]);
        }
    }
    return f;
}

ImageGrid warp_image(const ImageGrid& img, const WarpField& field) {
    if (img.height != field.height || img.width != field.width)
        throw ShapeError("warp_image: field shape mismatch");
    ImageGrid out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * img.width + x;
            const double sy = y + field.dy[idx];
            const double sx = x + field.dx[idx];
            const int y0 = static_cast<int>(std::floor(sy));
            const int x0 = static_cast<int>(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            const double v =
                (1 - fy) * ((1 - fx) * img.at_clamped(y0, x0) + fx * img.at_clamped(y0, x0 + 1)) +
                fy * ((1 - fx) * img.at_clamped(y0 + 1, x0) + fx * img.at_clamped(y0 + 1, x0 + 1));
            out.at(y, x) = clamp01(v);
        }
    }
    return out;
}

SegMask warp_mask(const SegMask& mask, const WarpField& field) {
    if (mask.height != field.height || mask.width != field.width)
        throw ShapeError("warp_mask: field shape mismatch");
    SegMask out(mask.height, mask.width);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * mask.width + x;
            int sy = static_cast<int>(std::lround(y + field.dy[idx]));
            int sx = static_cast<int>(std::lround(x + field.dx[idx]));
            sy = std::clamp(sy, 0, mask.height - 1);
            sx = std::clamp(sx, 0, mask.width - 1);
            out.at(y, x) = mask.at(sy, sx);
        }
    }
    return out;
}

std::pair<ImageGrid, SegMask> random_warp(const ImageGrid& img, const SegMask& mask,
                                          std::uint64_t rng_seed, double magnitude) {
    if (!same_shape(img, mask)) throw ShapeError("random_warp: image and mask shapes differ");
    WarpField field = make_warp_field(img.height, img.width, rng_seed, magnitude);
    auto out = std::make_pair(warp_image(img, field), warp_mask(mask, field));
    out.first.validate("random_warp");
    out.second.validate("random_warp");
    return out;
}

}  // namespace stfl
