#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "ofmkit/error.hpp"
#include "ofmkit/image.hpp"

namespace ofmkit {

// Uniform double in [0, 1) from the raw engine output. std::uniform_real_distribution
// is implementation-defined, this is not.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Standard normal via Box-Muller on the portable uniform.
inline double normal01(std::mt19937_64& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Procedural multi-octave texture: a sum of random Gaussian blobs squashed into
// (0, 1). Defined on the whole plane, so it can be sampled at any real position
// without interpolation; `width` x `height` is the nominal raster extent used for
// crop bounds.
struct TextureSpec {
    std::uint64_t seed = 7;
    int width = 512;
    int height = 512;
    double min_sigma = 3.0;
    double max_sigma = 24.0;
    double density = 0.5;  // blobs per sigma^2 of area, per octave
    double gain = 0.6;
};

class Texture {
public:
    explicit Texture(const TextureSpec& spec) : spec_(spec) {
        if (spec.width < 1 || spec.height < 1 || spec.min_sigma <= 0.0 || spec.max_sigma < spec.min_sigma ||
            spec.density <= 0.0)
            throw ConfigError("texture: invalid parameters");
        std::mt19937_64 rng(spec.seed);
        for (double sigma = spec.min_sigma; sigma <= spec.max_sigma * (1.0 + 1e-12); sigma *= 2.0) {
            Octave oct;
            oct.sigma = sigma;
            oct.cutoff = 3.5 * sigma;
            oct.cell = oct.cutoff;
            const double margin = oct.cutoff;
            oct.x0 = -margin;
            oct.y0 = -margin;
            const double span_x = spec.width + 2.0 * margin;
            const double span_y = spec.height + 2.0 * margin;
            oct.nx = static_cast<int>(std::ceil(span_x / oct.cell));
            oct.ny = static_cast<int>(std::ceil(span_y / oct.cell));
            oct.buckets.assign(static_cast<std::size_t>(oct.nx) * static_cast<std::size_t>(oct.ny), {});
            const auto count = static_cast<std::size_t>(std::llround(spec.density * span_x * span_y / (sigma * sigma)));
            for (std::size_t k = 0; k < count; ++k) {
                Blob b;
                b.x = oct.x0 + span_x * uniform01(rng);
                b.y = oct.y0 + span_y * uniform01(rng);
                b.amplitude = uniform(rng, -1.0, 1.0);
                const int cx = std::min(oct.nx - 1, static_cast<int>((b.x - oct.x0) / oct.cell));
                const int cy = std::min(oct.ny - 1, static_cast<int>((b.y - oct.y0) / oct.cell));
                oct.buckets[static_cast<std::size_t>(cy) * static_cast<std::size_t>(oct.nx) +
                            static_cast<std::size_t>(cx)]
                    .push_back(b);
            }
            octaves_.push_back(std::move(oct));
        }
    }

    const TextureSpec& spec() const noexcept { return spec_; }

    double operator()(double x, double y) const {
        double sum = 0.0;
        for (const Octave& oct : octaves_) {
            const double inv = 1.0 / (2.0 * oct.sigma * oct.sigma);
            const double cut2 = oct.cutoff * oct.cutoff;
            const int cx = static_cast<int>(std::floor((x - oct.x0) / oct.cell));
            const int cy = static_cast<int>(std::floor((y - oct.y0) / oct.cell));
            for (int by = cy - 1; by <= cy + 1; ++by) {
                if (by < 0 || by >= oct.ny) continue;
                for (int bx = cx - 1; bx <= cx + 1; ++bx) {
                    if (bx < 0 || bx >= oct.nx) continue;
                    for (const Blob& b : oct.buckets[static_cast<std::size_t>(by) * static_cast<std::size_t>(oct.nx) +
                                                     static_cast<std::size_t>(bx)]) {
                        const double dx = x - b.x;
                        const double dy = y - b.y;
                        const double r2 = dx * dx + dy * dy;
                        if (r2 < cut2) sum += b.amplitude * std::exp(-r2 * inv);
                    }
                }
            }
        }
        return 0.5 + 0.5 * std::tanh(spec_.gain * sum);
    }

private:
    struct Blob {
        double x = 0.0, y = 0.0, amplitude = 0.0;
    };
    struct Octave {
        double sigma = 0.0, cutoff = 0.0, cell = 0.0, x0 = 0.0, y0 = 0.0;
        int nx = 0, ny = 0;
        std::vector<std::vector<Blob>> buckets;
    };

    TextureSpec spec_;
    std::vector<Octave> octaves_;
};

/// Disk of radius R centered at (cx, cy), in pixel coordinates.
struct DiskScene {
    int width = 256;
    int height = 256;
    double cx = 127.0;
    double cy = 127.0;
    double radius = 20.0;
    bool antialias = false;  // exact pixel coverage when true, hard center test otherwise
    double foreground = 1.0;
    double background = 0.0;
};

/// Window of a texture with top-left corner at the offset theta.
struct PatchCropScene {
    TextureSpec texture;
    int width = 96;
    int height = 96;
    double offset_x = 0.0;
    double offset_y = 0.0;
};

/// I(x) = I_ref((A + I) x + t), with x measured in pixels from the image center
/// and I_ref the texture sampled around `origin` (texture center by default).
struct AffineScene {
    TextureSpec texture;
    int width = 96;
    int height = 96;
    std::array<double, 4> a{0.0, 0.0, 0.0, 0.0};  // row-major 2x2
    std::array<double, 2> t{0.0, 0.0};
    std::optional<std::array<double, 2>> origin;
};

using SceneSpec = std::variant<DiskScene, PatchCropScene, AffineScene>;

/// Pixel coordinates relative to the image center, the frame affine scenes use.
inline std::array<double, 2> centered_coordinates(int x, int y, int width, int height) {
    return {x - 0.5 * (width - 1), y - 0.5 * (height - 1)};
}

namespace detail {

// Area of the disk |p| <= R (centered at the origin) intersected with the
// signed box [0, x] x [0, y].
inline double disk_quadrant_area(double x, double y, double r) {
    const double sx = x < 0.0 ? -1.0 : 1.0;
    const double sy = y < 0.0 ? -1.0 : 1.0;
    x = std::min(std::abs(x), r);
    y = std::min(std::abs(y), r);
    double area;
    if (x * x + y * y <= r * r) {
        area = x * y;
    } else {
        const double xc = std::sqrt(std::max(0.0, r * r - y * y));
        auto prim = [r](double s) {
            const double q = std::clamp(s / r, -1.0, 1.0);
            return 0.5 * (s * std::sqrt(std::max(0.0, r * r - s * s)) + r * r * std::asin(q));
        };
        area = xc * y + prim(x) - prim(xc);
    }
    return sx * sy * area;
}

inline double disk_pixel_coverage(double px, double py, double cx, double cy, double r) {
    const double x0 = px - 0.5 - cx, x1 = px + 0.5 - cx;
    const double y0 = py - 0.5 - cy, y1 = py + 0.5 - cy;
    const double a = disk_quadrant_area(x1, y1, r) - disk_quadrant_area(x0, y1, r) -
                     disk_quadrant_area(x1, y0, r) + disk_quadrant_area(x0, y0, r);
    return std::clamp(a, 0.0, 1.0);
}

inline Image render(const DiskScene& s) {
    if (s.width < 1 || s.height < 1 || !(s.radius > 0.0))
        throw ConfigError("disk scene: invalid canvas or radius");
    if (s.cx - s.radius < -0.5 || s.cy - s.radius < -0.5 || s.cx + s.radius > s.width - 0.5 ||
        s.cy + s.radius > s.height - 0.5)
        throw ConfigError("disk scene: disk does not lie within the canvas");
    Image img(s.width, s.height, s.background);
    const double r2 = s.radius * s.radius;
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            const double dx = x - s.cx, dy = y - s.cy;
            double cov;
            if (s.antialias) {
                if (std::abs(dx) > s.radius + 1.0 || std::abs(dy) > s.radius + 1.0) continue;
                cov = disk_pixel_coverage(x, y, s.cx, s.cy, s.radius);
            } else {
                // Strict inequality: disks exactly 2R apart share no pixel.
                cov = (dx * dx + dy * dy < r2) ? 1.0 : 0.0;
            }
            if (cov > 0.0) img(x, y) = s.background + cov * (s.foreground - s.background);
        }
    }
    return img;
}

inline Image render(const PatchCropScene& s) {
    if (s.width < 1 || s.height < 1) throw ConfigError("patch scene: invalid size");
    if (s.offset_x < 0.0 || s.offset_y < 0.0 || s.offset_x + s.width - 1 > s.texture.width - 1 ||
        s.offset_y + s.height - 1 > s.texture.height - 1)
        throw ConfigError("patch scene: crop window exceeds texture bounds");
    const Texture tex(s.texture);
    Image img(s.width, s.height);
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) img(x, y) = tex(x + s.offset_x, y + s.offset_y);
    return img;
}

inline Image render(const AffineScene& s) {
    if (s.width < 1 || s.height < 1) throw ConfigError("affine scene: invalid size");
    const Texture tex(s.texture);
    const std::array<double, 2> origin = s.origin.value_or(std::array<double, 2>{0.5 * s.texture.width, 0.5 * s.texture.height});
    auto source = [&](int x, int y) {
        const auto c = centered_coordinates(x, y, s.width, s.height);
        const double sx = (1.0 + s.a[0]) * c[0] + s.a[1] * c[1] + s.t[0];
        const double sy = s.a[2] * c[0] + (1.0 + s.a[3]) * c[1] + s.t[1];
        return std::array<double, 2>{origin[0] + sx, origin[1] + sy};
    };
    for (auto [cx, cy] : {std::pair{0, 0}, std::pair{s.width - 1, 0}, std::pair{0, s.height - 1},
                          std::pair{s.width - 1, s.height - 1}}) {
        const auto p = source(cx, cy);
        if (p[0] < 0.0 || p[1] < 0.0 || p[0] > s.texture.width - 1 || p[1] > s.texture.height - 1)
            throw ConfigError("affine scene: transformed window exceeds texture bounds");
    }
    Image img(s.width, s.height);
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            const auto p = source(x, y);
            img(x, y) = tex(p[0], p[1]);
        }
    }
    return img;
}

} // namespace detail

/// Deterministic synthetic IAM sample for the given articulation.
inline Image generate(const SceneSpec& spec) {
    return std::visit([](const auto& s) { return detail::render(s); }, spec);
}

} // namespace ofmkit
