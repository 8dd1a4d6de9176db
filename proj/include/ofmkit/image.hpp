#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ofmkit/error.hpp"

namespace ofmkit {

// Grayscale intensity grid, row-major. Pixel (x, y) has its center at integer
// coordinates, so the image covers [-0.5, w-0.5] x [-0.5, h-0.5].
class Image {
public:
    Image() = default;

    Image(int width, int height, double fill = 0.0) : width_(width), height_(height) {
        if (width < 1 || height < 1)
            throw DataError("image dimensions must be positive, got " + std::to_string(width) + "x" +
                            std::to_string(height));
        data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
    }

    Image(int width, int height, std::vector<double> data) : width_(width), height_(height), data_(std::move(data)) {
        if (width < 1 || height < 1)
            throw DataError("image dimensions must be positive");
        if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
            throw DataError("image data length does not match dimensions");
        for (double v : data_)
            if (!std::isfinite(v)) throw DataError("image intensities must be finite");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(int x, int y) { return data_[index(x, y)]; }
    double operator()(int x, int y) const { return data_[index(x, y)]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    bool same_shape(const Image& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

// Per-pixel displacement (vx, vy) in pixels. A flow v carries I1 to I2 when
// I2(x) = I1(x + v(x)), i.e. it is stored on the grid of the second image.
struct FlowField {
    int width = 0;
    int height = 0;
    std::vector<double> vx;
    std::vector<double> vy;

    FlowField() = default;
    FlowField(int w, int h, double ux = 0.0, double uy = 0.0)
        : width(w), height(h),
          vx(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), ux),
          vy(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), uy) {
        if (w < 1 || h < 1) throw DataError("flow dimensions must be positive");
    }

    static FlowField zeros(int w, int h) { return FlowField(w, h); }
    static FlowField constant(int w, int h, double ux, double uy) { return FlowField(w, h, ux, uy); }

    std::size_t size() const noexcept { return vx.size(); }
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
    }

    bool matches(const Image& image) const noexcept { return width == image.width() && height == image.height(); }
    bool same_shape(const FlowField& other) const noexcept {
        return width == other.width && height == other.height;
    }

    bool is_finite() const noexcept {
        return std::all_of(vx.begin(), vx.end(), [](double v) { return std::isfinite(v); }) &&
               std::all_of(vy.begin(), vy.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const FlowField&, const FlowField&) = default;
};

// Binary support mask with the same layout as an Image.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int w, int h, bool fill = false)
        : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill ? 1 : 0) {}

    bool operator()(int x, int y) const {
        return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] != 0;
    }
    void set(int x, int y, bool v) {
        data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] = v ? 1 : 0;
    }
    std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
    }
};

// How samples outside the image domain are read.
enum class Border {
    zero,  // out-of-domain pixels read as 0
    clamp  // replicate the nearest edge pixel
};

namespace detail {

inline double pixel_or_zero(std::span<const double> plane, int w, int h, int x, int y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return plane[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
}

inline double sample_plane(std::span<const double> plane, int w, int h, double x, double y, Border border) {
    if (border == Border::clamp) {
        x = std::clamp(x, 0.0, static_cast<double>(w - 1));
        y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    }
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    // Far outside the domain: all four taps are zero.
    if (fx < -1.0 || fy < -1.0 || fx > static_cast<double>(w) || fy > static_cast<double>(h)) return 0.0;
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const double ax = x - fx;
    const double ay = y - fy;
    if (border == Border::clamp) {
        const int x1 = std::min(x0 + 1, w - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        auto at = [&](int xx, int yy) {
            return plane[static_cast<std::size_t>(yy) * static_cast<std::size_t>(w) + static_cast<std::size_t>(xx)];
        };
        return (1.0 - ay) * ((1.0 - ax) * at(x0, y0) + ax * at(x1, y0)) +
               ay * ((1.0 - ax) * at(x0, y1) + ax * at(x1, y1));
    }
    const double p00 = pixel_or_zero(plane, w, h, x0, y0);
    const double p10 = pixel_or_zero(plane, w, h, x0 + 1, y0);
    const double p01 = pixel_or_zero(plane, w, h, x0, y0 + 1);
    const double p11 = pixel_or_zero(plane, w, h, x0 + 1, y0 + 1);
    return (1.0 - ay) * ((1.0 - ax) * p00 + ax * p10) + ay * ((1.0 - ax) * p01 + ax * p11);
}

inline void require_same_shape(const Image& a, const Image& b, const char* op) {
    if (!a.same_shape(b))
        throw DataError(std::string(op) + ": dimension mismatch (" + std::to_string(a.width()) + "x" +
                        std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                        std::to_string(b.height()) + ")");
}

inline void require_match(const Image& image, const FlowField& flow, const char* op) {
    if (!flow.matches(image))
        throw DataError(std::string(op) + ": image and flow dimensions differ");
}

inline void require_same_shape(const FlowField& a, const FlowField& b, const char* op) {
    if (!a.same_shape(b)) throw DataError(std::string(op) + ": flow dimensions differ");
}

} // namespace detail

/// Bilinear sample of the image at a real-valued position.
inline double sample(const Image& image, double x, double y, Border border = Border::zero) {
    return detail::sample_plane(image.data(), image.width(), image.height(), x, y, border);
}

/// Backward warp: out(x) = image(x + flow(x)), bilinear, zero outside the domain
/// unless `border` says otherwise.
inline Image warp(const Image& image, const FlowField& flow, Border border = Border::zero) {
    detail::require_match(image, flow, "warp");
    Image out(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            const std::size_t k = flow.index(x, y);
            const double dx = flow.vx[k];
            const double dy = flow.vy[k];
            // Exact copy on zero displacement keeps warp(I, 0) == I bit for bit.
            out(x, y) = (dx == 0.0 && dy == 0.0) ? image(x, y) : sample(image, x + dx, y + dy, border);
        }
    }
    return out;
}

/// Flow whose warp equals warping by `first` and then by `second`:
/// result(x) = second(x) + first(x + second(x)). `first` is sampled bilinearly
/// with replicated borders.
inline FlowField compose_flows(const FlowField& first, const FlowField& second) {
    detail::require_same_shape(first, second, "compose_flows");
    FlowField out(first.width, first.height);
    for (int y = 0; y < first.height; ++y) {
        for (int x = 0; x < first.width; ++x) {
            const std::size_t k = first.index(x, y);
            const double px = x + second.vx[k];
            const double py = y + second.vy[k];
            out.vx[k] = second.vx[k] + detail::sample_plane(first.vx, first.width, first.height, px, py, Border::clamp);
            out.vy[k] = second.vy[k] + detail::sample_plane(first.vy, first.width, first.height, px, py, Border::clamp);
        }
    }
    return out;
}

inline FlowField scale_flow(const FlowField& flow, double s) {
    if (!std::isfinite(s)) throw ConfigError("scale_flow: scale must be finite");
    FlowField out = flow;
    for (double& v : out.vx) v *= s;
    for (double& v : out.vy) v *= s;
    return out;
}

inline FlowField subtract_flows(const FlowField& a, const FlowField& b) {
    detail::require_same_shape(a, b, "subtract_flows");
    FlowField out = a;
    for (std::size_t k = 0; k < out.size(); ++k) {
        out.vx[k] -= b.vx[k];
        out.vy[k] -= b.vy[k];
    }
    return out;
}

/// For `flow` on the target grid (target(x) = source(x + flow(x))), the flow on
/// the grid of the fraction-t intermediate frame: mid(z) = source(z + t v(z)).
/// Solves v(z) = flow(z - (1 - t) v(z)) by fixed-point iteration; t = 1 returns `flow`.
inline FlowField transport_flow(const FlowField& flow, double t, int iterations = 10) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("transport_flow: t must lie in [0, 1]");
    FlowField v = flow;
    const double back = 1.0 - t;
    if (back == 0.0) return v;
    for (int it = 0; it < iterations; ++it) {
        FlowField next(flow.width, flow.height);
        for (int y = 0; y < flow.height; ++y)
            for (int x = 0; x < flow.width; ++x) {
                const std::size_t k = flow.index(x, y);
                const double px = x - back * v.vx[k], py = y - back * v.vy[k];
                next.vx[k] = detail::sample_plane(flow.vx, flow.width, flow.height, px, py, Border::clamp);
                next.vy[k] = detail::sample_plane(flow.vy, flow.width, flow.height, px, py, Border::clamp);
            }
        v = std::move(next);
    }
    return v;
}

/// Ambient L2 distance: sqrt(sum (I1 - I2)^2 * pixel_size^2).
inline double l2_distance(const Image& a, const Image& b, double pixel_size = 1.0) {
    detail::require_same_shape(a, b, "l2_distance");
    double sum = 0.0;
    const auto da = a.data();
    const auto db = b.data();
    for (std::size_t k = 0; k < da.size(); ++k) {
        const double d = da[k] - db[k];
        sum += d * d;
    }
    return std::sqrt(sum) * pixel_size;
}

/// Centroid of |I - background|, the weighted analog of pixel counting.
inline std::pair<double, double> intensity_centroid(const Image& image, double background = 0.0) {
    double m = 0.0, sx = 0.0, sy = 0.0;
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            const double w = std::abs(image(x, y) - background);
            m += w;
            sx += w * x;
            sy += w * y;
        }
    }
    if (m <= 0.0) throw DataError("intensity_centroid: image equals background everywhere");
    return {sx / m, sy / m};
}

/// Pixels that differ from the border median by more than a quarter of the
/// dynamic range: the moving object against a flat background.
inline Mask object_support(const Image& img) {
    std::vector<double> border;
    const int w = img.width(), h = img.height();
    for (int x = 0; x < w; ++x) {
        border.push_back(img(x, 0));
        border.push_back(img(x, h - 1));
    }
    for (int y = 1; y + 1 < h; ++y) {
        border.push_back(img(0, y));
        border.push_back(img(w - 1, y));
    }
    std::nth_element(border.begin(), border.begin() + static_cast<std::ptrdiff_t>(border.size() / 2), border.end());
    const double bg = border[border.size() / 2];
    const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
    const double thr = 0.25 * (*hi - *lo);
    Mask m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.set(x, y, thr > 0.0 && std::abs(img(x, y) - bg) > thr);
    if (m.count() == 0) m = Mask(w, h, true);
    return m;
}

} // namespace ofmkit
