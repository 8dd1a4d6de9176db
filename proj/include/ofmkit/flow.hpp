#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ofmkit/error.hpp"
#include "ofmkit/image.hpp"

namespace ofmkit {

/// Horn-Schunck estimator settings. `iterations` Jacobi sweeps run on the finest
/// pyramid level, split evenly across `warps` re-linearizations; coarser levels
/// are cheap and get level_growth times more per level. Alpha assumes
/// intensities in [0, 1].
struct FlowConfig {
    double alpha = 0.4;
    int iterations = 100;
    int levels = 5;
    double downscale = 0.5;
    double consistency_threshold = 0.5;  // epsilon, pixels
    int warps = 10;
    double presmooth_sigma = 0.6;
    double level_growth = 2.0;

    void validate() const {
        if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("flow config: alpha must be > 0");
        if (iterations < 1) throw ConfigError("flow config: iterations must be >= 1");
        if (levels < 1) throw ConfigError("flow config: levels must be >= 1");
        if (!(downscale > 0.0 && downscale < 1.0)) throw ConfigError("flow config: downscale must lie in (0, 1)");
        if (!(consistency_threshold > 0.0)) throw ConfigError("flow config: consistency threshold must be > 0");
        if (warps < 1 || warps > iterations) throw ConfigError("flow config: warps must lie in [1, iterations]");
        if (presmooth_sigma < 0.0) throw ConfigError("flow config: presmooth sigma must be >= 0");
        if (!(level_growth >= 1.0 && level_growth <= 4.0)) throw ConfigError("flow config: level growth must lie in [1, 4]");
    }
};

/// Coarsest pyramid level is kept at least this many pixels per side.
inline constexpr int min_pyramid_side = 16;

/// Number of levels actually used for a w x h image: cfg.levels, reduced so the
/// coarsest level keeps min_pyramid_side pixels per side.
inline int effective_levels(const FlowConfig& cfg, int width, int height) {
    int levels = 1;
    double w = width, h = height;
    while (levels < cfg.levels) {
        const double nw = std::round(w * cfg.downscale);
        const double nh = std::round(h * cfg.downscale);
        if (nw < min_pyramid_side || nh < min_pyramid_side) break;
        w = nw;
        h = nh;
        ++levels;
    }
    return levels;
}

namespace detail {

inline Image gaussian_blur(const Image& in, double sigma) {
    if (sigma <= 0.0) return in;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
        total += kernel[k + radius];
    }
    for (double& k : kernel) k /= total;
    const int w = in.width(), h = in.height();
    Image tmp(w, h), out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k) s += kernel[k + radius] * in(std::clamp(x + k, 0, w - 1), y);
            tmp(x, y) = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k) s += kernel[k + radius] * tmp(x, std::clamp(y + k, 0, h - 1));
            out(x, y) = s;
        }
    return out;
}

inline Image resample(const Image& in, int w, int h) {
    Image out(w, h);
    const double sx = static_cast<double>(in.width()) / w;
    const double sy = static_cast<double>(in.height()) / h;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out(x, y) = sample(in, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5, Border::clamp);
    return out;
}

inline Image downsample(const Image& in, double factor) {
    const int w = static_cast<int>(std::round(in.width() * factor));
    const int h = static_cast<int>(std::round(in.height() * factor));
    const double sigma = 0.6 * std::sqrt(1.0 / (factor * factor) - 1.0);
    return resample(gaussian_blur(in, sigma), w, h);
}

inline FlowField upsample_flow(const FlowField& coarse, int w, int h) {
    FlowField out(w, h);
    const double sx = static_cast<double>(coarse.width) / w;
    const double sy = static_cast<double>(coarse.height) / h;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double cx = (x + 0.5) * sx - 0.5;
            const double cy = (y + 0.5) * sy - 0.5;
            const std::size_t k = out.index(x, y);
            out.vx[k] = sample_plane(coarse.vx, coarse.width, coarse.height, cx, cy, Border::clamp) / sx;
            out.vy[k] = sample_plane(coarse.vy, coarse.width, coarse.height, cx, cy, Border::clamp) / sy;
        }
    return out;
}

// Central differences with replicated borders.
inline void gradients(const Image& img, Image& gx, Image& gy) {
    const int w = img.width(), h = img.height();
    gx = Image(w, h);
    gy = Image(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            gx(x, y) = 0.5 * (img(std::min(x + 1, w - 1), y) - img(std::max(x - 1, 0), y));
            gy(x, y) = 0.5 * (img(x, std::min(y + 1, h - 1)) - img(x, std::max(y - 1, 0)));
        }
}

inline bool is_constant(const Image& img) {
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    return *hi - *lo <= 1e-12;
}

// Horn-Schunck on one pyramid level, refining `flow` in place. The data term is
// linearized around the current flow: I1(x + v) ~ I1w + grad . (v - v0).
inline void horn_schunck_level(const Image& src, const Image& dst, FlowField& flow, const FlowConfig& cfg,
                               int iterations) {
    const int w = src.width(), h = src.height();
    const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    Image sx, sy, dx, dy;
    gradients(src, sx, sy);
    gradients(dst, dx, dy);
    const double alpha2 = cfg.alpha * cfg.alpha;

    std::vector<double> ix(n), iy(n), c(n), denom(n);
    FlowField next(w, h);
    const int base = iterations / cfg.warps;
    const int extra = iterations % cfg.warps;

    for (int warp_pass = 0; warp_pass < cfg.warps; ++warp_pass) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t k = flow.index(x, y);
                const double px = x + flow.vx[k];
                const double py = y + flow.vy[k];
                if (px < 0.0 || py < 0.0 || px > w - 1 || py > h - 1) {
                    // No correspondence inside the frame: smoothness only.
                    ix[k] = iy[k] = c[k] = 0.0;
                } else {
                    const double i1w = sample(src, px, py, Border::clamp);
                    const double gx = 0.5 * (sample(sx, px, py, Border::clamp) + dx(x, y));
                    const double gy = 0.5 * (sample(sy, px, py, Border::clamp) + dy(x, y));
                    ix[k] = gx;
                    iy[k] = gy;
                    c[k] = i1w - dst(x, y) - gx * flow.vx[k] - gy * flow.vy[k];
                }
                denom[k] = 1.0 / (alpha2 + ix[k] * ix[k] + iy[k] * iy[k]);
            }
        }
        const int sweeps = base + (warp_pass < extra ? 1 : 0);
        for (int it = 0; it < sweeps; ++it) {
            // Jacobi: reads `flow`, writes `next`.
            for (int y = 0; y < h; ++y) {
                const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
                for (int x = 0; x < w; ++x) {
                    const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
                    const std::size_t k = flow.index(x, y);
                    const std::size_t kl = flow.index(xm, y), kr = flow.index(xp, y);
                    const std::size_t ku = flow.index(x, ym), kd = flow.index(x, yp);
                    const double ub = 0.25 * (flow.vx[kl] + flow.vx[kr] + flow.vx[ku] + flow.vx[kd]);
                    const double vb = 0.25 * (flow.vy[kl] + flow.vy[kr] + flow.vy[ku] + flow.vy[kd]);
                    const double r = (ix[k] * ub + iy[k] * vb + c[k]) * denom[k];
                    next.vx[k] = ub - ix[k] * r;
                    next.vy[k] = vb - iy[k] * r;
                }
            }
            std::swap(flow.vx, next.vx);
            std::swap(flow.vy, next.vy);
        }
    }
}

} // namespace detail

struct FlowEstimate {
    FlowField flow;
    std::vector<double> residual;  // |I1(x + v) - I2(x)| per pixel
    bool degenerate = false;       // both inputs constant; flow forced to zero
};

/// Dense flow v with I2(x) ~ I1(x + v(x)), coarse to fine. Deterministic for
/// fixed inputs and configuration.
inline FlowEstimate estimate_flow_detailed(const Image& i1, const Image& i2, const FlowConfig& cfg) {
    detail::require_same_shape(i1, i2, "estimate_flow");
    cfg.validate();
    FlowEstimate out;
    const int w = i1.width(), h = i1.height();
    if (detail::is_constant(i1) && detail::is_constant(i2)) {
        out.flow = FlowField::zeros(w, h);
        out.degenerate = true;
    } else {
        const int levels = effective_levels(cfg, w, h);
        std::vector<Image> p1{detail::gaussian_blur(i1, cfg.presmooth_sigma)};
        std::vector<Image> p2{detail::gaussian_blur(i2, cfg.presmooth_sigma)};
        for (int l = 1; l < levels; ++l) {
            p1.push_back(detail::downsample(p1.back(), cfg.downscale));
            p2.push_back(detail::downsample(p2.back(), cfg.downscale));
        }
        FlowField flow = FlowField::zeros(p1.back().width(), p1.back().height());
        for (int l = levels - 1; l >= 0; --l) {
            if (flow.width != p1[l].width() || flow.height != p1[l].height())
                flow = detail::upsample_flow(flow, p1[l].width(), p1[l].height());
            const int sweeps = static_cast<int>(std::lround(cfg.iterations * std::pow(cfg.level_growth, l)));
            detail::horn_schunck_level(p1[l], p2[l], flow, cfg, sweeps);
        }
        out.flow = std::move(flow);
    }
    if (!out.flow.is_finite()) throw NumericalError("estimate_flow: non-finite flow");
    out.residual.resize(out.flow.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t k = out.flow.index(x, y);
            out.residual[k] = std::abs(sample(i1, x + out.flow.vx[k], y + out.flow.vy[k], Border::clamp) - i2(x, y));
        }
    return out;
}

inline FlowField estimate_flow(const Image& i1, const Image& i2, const FlowConfig& cfg) {
    return estimate_flow_detailed(i1, i2, cfg).flow;
}

struct ConsistencyReport {
    bool consistent = false;
    double fb_error = 0.0;           // mean |fwd(x) + bwd(x + fwd(x))| over valid pixels
    double excluded_fraction = 0.0;  // pixels whose forward target leaves the frame
};

/// Forward-backward check. `forward` carries I1 to I2 (stored on I2's grid),
/// `backward` carries I2 to I1.
inline ConsistencyReport check_consistency(const FlowField& forward, const FlowField& backward, double epsilon) {
    detail::require_same_shape(forward, backward, "check_consistency");
    if (!(epsilon > 0.0)) throw ConfigError("check_consistency: epsilon must be > 0");
    const int w = forward.width, h = forward.height;
    double sum = 0.0;
    std::size_t valid = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t k = forward.index(x, y);
            const double px = x + forward.vx[k];
            const double py = y + forward.vy[k];
            if (px < 0.0 || py < 0.0 || px > w - 1 || py > h - 1) continue;
            const double ex = forward.vx[k] + detail::sample_plane(backward.vx, w, h, px, py, Border::clamp);
            const double ey = forward.vy[k] + detail::sample_plane(backward.vy, w, h, px, py, Border::clamp);
            sum += std::sqrt(ex * ex + ey * ey);
            ++valid;
        }
    ConsistencyReport r;
    r.excluded_fraction = 1.0 - static_cast<double>(valid) / static_cast<double>(forward.size());
    r.fb_error = valid ? sum / static_cast<double>(valid) : std::numeric_limits<double>::infinity();
    r.consistent = r.fb_error <= epsilon;
    return r;
}

/// RMS displacement magnitude over the support (whole frame when no mask).
/// This is the OFM metric d_O(phi_0, phi).
inline double flow_norm(const FlowField& flow, const Mask* support = nullptr) {
    if (support && (support->width != flow.width || support->height != flow.height))
        throw DataError("flow_norm: mask dimensions differ from flow");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < flow.size(); ++k) {
        if (support && !support->data[k]) continue;
        sum += flow.vx[k] * flow.vx[k] + flow.vy[k] * flow.vy[k];
        ++count;
    }
    if (count == 0) throw DataError("flow_norm: empty support");
    return std::sqrt(sum / static_cast<double>(count));
}

inline double flow_norm(const FlowField& flow, const Mask& support) { return flow_norm(flow, &support); }

struct FlowResult {
    FlowField flow;      // m1 -> m2
    FlowField backward;  // m2 -> m1
    std::vector<double> residual;
    double fb_error = 0.0;
    double excluded_fraction = 0.0;
    bool consistent = false;
    bool degenerate = false;
};

/// Forward and backward estimates plus the consistency verdict, returned
/// whether or not the pair passes.
inline FlowResult flow_pair(const Image& m1, const Image& m2, const FlowConfig& cfg) {
    detail::require_same_shape(m1, m2, "flow_between");
    auto fwd = estimate_flow_detailed(m1, m2, cfg);
    auto bwd = estimate_flow_detailed(m2, m1, cfg);
    const auto report = check_consistency(fwd.flow, bwd.flow, cfg.consistency_threshold);
    FlowResult r;
    r.flow = std::move(fwd.flow);
    r.backward = std::move(bwd.flow);
    r.residual = std::move(fwd.residual);
    r.fb_error = report.fb_error;
    r.excluded_fraction = report.excluded_fraction;
    r.consistent = report.consistent;
    r.degenerate = fwd.degenerate || bwd.degenerate;
    return r;
}

/// The flow carrying m1 to m2 if m2 lies in the flow neighborhood of m1,
/// nothing otherwise.
inline std::optional<FlowResult> flow_between(const Image& m1, const Image& m2, const FlowConfig& cfg) {
    FlowResult r = flow_pair(m1, m2, cfg);
    if (!r.consistent) return std::nullopt;
    return r;
}

} // namespace ofmkit
