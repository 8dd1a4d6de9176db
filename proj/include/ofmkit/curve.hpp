#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ofmkit/error.hpp"
#include "ofmkit/flow.hpp"
#include "ofmkit/image.hpp"
#include "ofmkit/parallel.hpp"

namespace ofmkit {

// A discretized curve c(t_0..t_N) on the IAM with its arc-length geometry.
// Fields live on the first `domain` samples; later samples only serve as
// targets. The last sample always has radius 0, so the domain stops short of it.
struct Curve {
    std::vector<double> times;   // strictly increasing, N + 1 entries
    std::vector<double> arc;     // s(t_i), arc[0] = 0
    std::vector<double> radius;  // restricted radius r_i for every sample
    int domain = 0;
    std::vector<Image> frames;         // optional
    std::vector<FlowField> hop_flows;  // flow carrying frame i to frame i + 1, when frames exist

    int samples() const noexcept { return static_cast<int>(times.size()); }
    double length() const noexcept { return arc.back(); }
    bool has_frames() const noexcept { return !frames.empty(); }

    double min_radius() const {
        return *std::min_element(radius.begin(), radius.begin() + domain);
    }
    int argmin_radius() const {
        return static_cast<int>(std::min_element(radius.begin(), radius.begin() + domain) - radius.begin());
    }
    double mean_radius() const {
        return std::accumulate(radius.begin(), radius.begin() + domain, 0.0) / domain;
    }
    // (max r - min r) / mean r over the domain.
    double radius_spread() const {
        const auto [lo, hi] = std::minmax_element(radius.begin(), radius.begin() + domain);
        const double m = mean_radius();
        return m > 0.0 ? (*hi - *lo) / m : (*hi > *lo ? std::numeric_limits<double>::infinity() : 0.0);
    }

    void validate() const {
        const std::size_t n = times.size();
        if (n < 2) throw DataError("curve: need at least 2 samples");
        if (arc.size() != n || radius.size() != n) throw DataError("curve: inconsistent array lengths");
        if (domain < 1 || domain > static_cast<int>(n)) throw DataError("curve: domain size out of range");
        if (arc[0] != 0.0) throw DataError("curve: arc length must start at 0");
        for (std::size_t i = 1; i < n; ++i) {
            if (!(times[i] > times[i - 1])) throw DataError("curve: time stamps must increase strictly");
            if (!(arc[i] > arc[i - 1])) throw DataError("curve: arc length must increase strictly");
        }
        const double tol = 1e-12 * std::max(1.0, length());
        for (std::size_t i = 0; i < n; ++i) {
            if (!(radius[i] >= 0.0)) throw DataError("curve: radius must be >= 0");
            if (radius[i] > length() - arc[i] + tol)
                throw DataError("curve: radius at sample " + std::to_string(i) + " runs past the curve end");
        }
        if (!frames.empty() && (frames.size() != n || hop_flows.size() + 1 != n))
            throw DataError("curve: frame or hop-flow count does not match samples");
    }

    // Hop j containing arc position s, with the fraction u in [0, 1] along it.
    std::pair<int, double> locate(double s) const {
        if (s < 0.0 || s > length() * (1.0 + 1e-12)) throw DataError("curve: arc position outside the curve");
        int j = static_cast<int>(std::upper_bound(arc.begin(), arc.end(), s) - arc.begin()) - 1;
        j = std::clamp(j, 0, samples() - 2);
        const double u = std::clamp((s - arc[j]) / (arc[j + 1] - arc[j]), 0.0, 1.0);
        return {j, u};
    }

    // Piecewise-linear s(t).
    double arc_at(double t) const {
        if (t <= times.front()) return 0.0;
        if (t >= times.back()) return length();
        const int j = static_cast<int>(std::upper_bound(times.begin(), times.end(), t) - times.begin()) - 1;
        const double u = (t - times[j]) / (times[j + 1] - times[j]);
        return arc[j] + u * (arc[j + 1] - arc[j]);
    }

    // Image at arc position s, by scaling the containing hop's flow.
    Image render(double s) const {
        if (!has_frames()) throw DataError("curve: no frames to render from");
        const auto [j, u] = locate(s);
        if (u == 0.0) return frames[j];
        if (u == 1.0) return frames[j + 1];
        return warp(frames[j], scale_flow(transport_flow(hop_flows[j], u), u), Border::clamp);
    }
};

using CurvePtr = std::shared_ptr<const Curve>;

/// Synthetic curve from its geometry. `radii` covers every sample; `domain`
/// defaults to all samples but the last.
inline CurvePtr curve_from_geometry(std::vector<double> times, const std::vector<double>& hops,
                                    std::vector<double> radii, std::optional<int> domain = std::nullopt) {
    auto c = std::make_shared<Curve>();
    if (hops.size() + 1 != times.size()) throw DataError("curve: need one hop length per consecutive pair");
    c->times = std::move(times);
    c->arc.assign(c->times.size(), 0.0);
    for (std::size_t i = 0; i < hops.size(); ++i) c->arc[i + 1] = c->arc[i] + hops[i];
    c->radius = std::move(radii);
    c->domain = domain.value_or(static_cast<int>(c->times.size()) - 1);
    c->validate();
    return c;
}

/// Evenly timed curve with equal hops whose flow neighborhoods span `reach`
/// hops: r_i = min(reach * hop, s_N - s_i). The domain is the constant-radius
/// part, so the curve has constant curvature there.
inline CurvePtr uniform_curve(int hops, double hop, int reach, double dt = 1.0) {
    if (hops < 1 || reach < 1 || reach > hops || !(hop > 0.0) || !(dt > 0.0))
        throw ConfigError("uniform_curve: invalid parameters");
    std::vector<double> times(hops + 1), lengths(hops, hop), radii(hops + 1);
    for (int i = 0; i <= hops; ++i) {
        times[i] = i * dt;
        radii[i] = std::min(reach, hops - i) * hop;
    }
    return curve_from_geometry(times, lengths, radii, hops + 1 - reach);
}

struct CurveFromFramesOptions {
    std::optional<int> max_reach;  // hops scanned forward when measuring radii
    std::optional<int> domain;
};

/// Curve through real frames. Hop lengths are symmetrized flow norms over the
/// object support, as for graph edges; r_i is the arc length to the furthest
/// forward sample reached by an unbroken run of consistent flows from frame i.
inline CurvePtr curve_from_frames(const std::vector<Image>& frames, const std::vector<double>& times,
                                  const FlowConfig& cfg, const CurveFromFramesOptions& opts = {}) {
    const int n = static_cast<int>(frames.size());
    if (n < 2) throw DataError("curve: need at least 2 frames");
    if (times.size() != frames.size()) throw DataError("curve: need one time stamp per frame");
    for (const Image& f : frames) detail::require_same_shape(frames.front(), f, "curve");
    cfg.validate();
    auto c = std::make_shared<Curve>();
    c->times = times;
    c->frames = frames;
    c->hop_flows.resize(n - 1);
    std::vector<double> hop(n - 1);
    std::vector<std::string> broken(n - 1);
    parallel_for(static_cast<std::size_t>(n - 1), [&](std::size_t i) {
        const FlowResult r = flow_pair(frames[i], frames[i + 1], cfg);
        const auto back = check_consistency(r.backward, r.flow, cfg.consistency_threshold);
        if (!r.consistent || !back.consistent) broken[i] = "hop " + std::to_string(i) + " is not a consistent flow";
        hop[i] = 0.5 * (flow_norm(r.flow, object_support(frames[i + 1])) + flow_norm(r.backward, object_support(frames[i])));
        c->hop_flows[i] = r.flow;
    });
    for (const auto& b : broken)
        if (!b.empty()) throw DataError("curve: " + b);
    c->arc.assign(n, 0.0);
    for (int i = 0; i + 1 < n; ++i) c->arc[i + 1] = c->arc[i] + hop[i];
    const int reach = opts.max_reach.value_or(n - 1);
    if (reach < 1) throw ConfigError("curve: max_reach must be >= 1");
    c->radius.assign(n, 0.0);
    parallel_for(static_cast<std::size_t>(n - 1), [&](std::size_t i) {
        int furthest = static_cast<int>(i) + 1;
        for (int j = static_cast<int>(i) + 2; j < n && j <= static_cast<int>(i) + reach; ++j) {
            const FlowResult r = flow_pair(frames[i], frames[j], cfg);
            if (!r.consistent || !check_consistency(r.backward, r.flow, cfg.consistency_threshold).consistent) break;
            furthest = j;
        }
        c->radius[i] = c->arc[furthest] - c->arc[i];
    });
    c->domain = opts.domain.value_or(n - 1);
    c->validate();
    return c;
}

/// r_t at sample i; 0 at the last sample.
inline double restricted_radius(const Curve& c, int i) {
    if (i < 0 || i >= c.samples()) throw DataError("restricted_radius: sample index out of range");
    return c.radius[i];
}

/// h on the curve's domain samples, linear in between.
struct MotionFunction {
    std::vector<double> times;
    std::vector<double> values;

    double operator()(double t) const {
        if (t <= times.front()) return values.front();
        if (t >= times.back()) return values.back();
        const std::size_t j = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin()) - 1;
        const double u = (t - times[j]) / (times[j + 1] - times[j]);
        return values[j] + u * (values[j + 1] - values[j]);
    }
};

// Target of a field at a source sample: the point `offset` arc length ahead of
// sample `anchor`.
struct CurvePoint {
    int anchor = 0;
    double offset = 0.0;
};

struct CurveFlowField {
    CurvePtr curve;
    std::vector<CurvePoint> targets;  // one per domain sample

    // Image the field sends c(t_i) to.
    Image render_target(int i) const {
        const CurvePoint& p = targets.at(static_cast<std::size_t>(i));
        return curve->render(curve->arc[p.anchor] + p.offset);
    }
};

/// The field with motion function h. Throws with the
/// list of samples where h is infeasible.
inline CurveFlowField field_from_motion(const CurvePtr& curve, const std::vector<double>& h) {
    if (!curve) throw DataError("field_from_motion: null curve");
    if (static_cast<int>(h.size()) != curve->domain)
        throw DataError("field_from_motion: need one motion value per domain sample");
    std::string bad;
    for (int i = 0; i < curve->domain; ++i)
        if (!(h[i] >= 0.0 && h[i] <= curve->radius[i])) bad += (bad.empty() ? "" : ",") + std::to_string(i);
    if (!bad.empty()) throw DataError("field_from_motion: infeasible motion at samples " + bad);
    CurveFlowField f;
    f.curve = curve;
    f.targets.resize(h.size());
    for (int i = 0; i < curve->domain; ++i) f.targets[i] = {i, h[i]};
    return f;
}

/// h_V(t_i): arc length from each source to its target.
inline MotionFunction motion_of_field(const CurveFlowField& field) {
    const Curve& c = *field.curve;
    MotionFunction m;
    m.times.assign(c.times.begin(), c.times.begin() + c.domain);
    m.values.resize(c.domain);
    for (int i = 0; i < c.domain; ++i) {
        const CurvePoint& p = field.targets[i];
        m.values[i] = p.anchor == i ? p.offset : (c.arc[p.anchor] + p.offset) - c.arc[i];
    }
    return m;
}

inline CurveFlowField zero_field(const CurvePtr& curve) {
    return field_from_motion(curve, std::vector<double>(curve->domain, 0.0));
}

inline CurveFlowField unit_field(const CurvePtr& curve) {
    return field_from_motion(curve, std::vector<double>(curve->radius.begin(), curve->radius.begin() + curve->domain));
}

inline bool is_parallel(const CurveFlowField& field, double tol) {
    const auto m = motion_of_field(field);
    const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
    return *hi - *lo <= tol;
}

/// The parallel field h = delta. Fails when delta reaches the smallest radius,
/// naming that sample.
inline CurveFlowField parallel_translate(const CurvePtr& curve, int i0, double delta) {
    if (i0 < 0 || i0 >= curve->domain) throw DataError("parallel_translate: start sample out of range");
    if (!(delta >= 0.0)) throw DataError("parallel_translate: delta must be >= 0");
    const double rmin = curve->min_radius();
    if (delta > 0.0 && !(delta < rmin))
        throw DataError("parallel_translate: delta " + std::to_string(delta) + " is not below the radius " +
                        std::to_string(rmin) + " at sample " + std::to_string(curve->argmin_radius()));
    return field_from_motion(curve, std::vector<double>(curve->domain, delta));
}

/// Exact integral of |h_V(t) - h| with h_V linear between samples.
inline double approx_cost(const MotionFunction& hv, double h) {
    double total = 0.0;
    for (std::size_t j = 0; j + 1 < hv.times.size(); ++j) {
        const double dt = hv.times[j + 1] - hv.times[j];
        const double g0 = hv.values[j] - h, g1 = hv.values[j + 1] - h;
        if ((g0 >= 0.0 && g1 >= 0.0) || (g0 <= 0.0 && g1 <= 0.0))
            total += 0.5 * dt * std::abs(g0 + g1);
        else
            total += 0.5 * dt * (g0 * g0 + g1 * g1) / std::abs(g0 - g1);
    }
    return total;
}

/// Time measure of {t : h_V(t) <= k}.
inline double time_below(const MotionFunction& hv, double k) {
    double total = 0.0;
    for (std::size_t j = 0; j + 1 < hv.times.size(); ++j) {
        const double dt = hv.times[j + 1] - hv.times[j];
        const double a = hv.values[j], b = hv.values[j + 1];
        if (a == b) {
            if (a <= k) total += dt;
            continue;
        }
        const double lo = std::min(a, b), hi = std::max(a, b);
        if (k >= hi)
            total += dt;
        else if (k > lo)
            total += dt * (k - lo) / (hi - lo);
    }
    return total;
}

/// Level splitting the time measure in half: the smallest k with
/// |{h_V <= k}| >= T / 2. On a plateau of medians this is the lower end.
inline double weighted_median(const MotionFunction& hv) {
    if (hv.times.size() < 2) return hv.values.front();
    const double half = 0.5 * (hv.times.back() - hv.times.front());
    std::vector<double> knots = hv.values;
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
    // F(k) = time_below(k) is linear between knots and jumps at a knot by the
    // time h_V spends flat there.
    auto atom = [&](double k) {
        double a = 0.0;
        for (std::size_t j = 0; j + 1 < hv.times.size(); ++j)
            if (hv.values[j] == k && hv.values[j + 1] == k) a += hv.times[j + 1] - hv.times[j];
        return a;
    };
    double f_prev = 0.0;
    for (std::size_t m = 0; m < knots.size(); ++m) {
        const double f = time_below(hv, knots[m]);
        if (f >= half) {
            if (m == 0) return knots[0];
            const double f_left = f - atom(knots[m]);
            if (f_left >= half && f_left > f_prev) {
                const double lo = knots[m - 1];
                return std::clamp(lo + (half - f_prev) / (f_left - f_prev) * (knots[m] - lo), lo, knots[m]);
            }
            return knots[m];
        }
        f_prev = f;
    }
    return knots.back();
}

struct ParallelApprox {
    double median = 0.0;  // h-hat
    double level = 0.0;   // min(h-hat, min r), the parallel field actually returned
    CurveFlowField field;
    double bound = 0.0;   // approx_cost(h_V, h-hat)
};

/// Best parallel approximation in the lower-bound sense. Requires constant
/// curvature: relative spread of r_t at most `spread_tol`.
inline ParallelApprox best_parallel_approx(const CurveFlowField& v, double spread_tol = 0.05) {
    const Curve& c = *v.curve;
    if (c.radius_spread() > spread_tol)
        throw DataError("best_parallel_approx: curvature is not constant (radius spread " +
                        std::to_string(c.radius_spread()) + ")");
    const auto hv = motion_of_field(v);
    ParallelApprox out;
    out.median = weighted_median(hv);
    out.level = std::min(out.median, c.min_radius());
    out.field = field_from_motion(v.curve, std::vector<double>(c.domain, out.level));
    out.bound = approx_cost(hv, out.median);
    return out;
}

/// E(V, W) = integral of the arc distance between the two targets over time.
inline double realized_error(const CurveFlowField& v, const CurveFlowField& w) {
    if (v.curve != w.curve) throw DataError("realized_error: fields live on different curves");
    const auto hv = motion_of_field(v), hw = motion_of_field(w);
    MotionFunction gap{hv.times, std::vector<double>(hv.values.size())};
    for (std::size_t i = 0; i < gap.values.size(); ++i) gap.values[i] = hv.values[i] - hw.values[i];
    return approx_cost(gap, 0.0);
}

/// h_{V+W} = min(h_V + h_W, r_t).
inline CurveFlowField monoid_add(const CurveFlowField& v, const CurveFlowField& w) {
    if (v.curve != w.curve) throw DataError("monoid_add: fields live on different curves");
    const auto hv = motion_of_field(v), hw = motion_of_field(w);
    std::vector<double> h(hv.values.size());
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::min(hv.values[i] + hw.values[i], v.curve->radius[i]);
    return field_from_motion(v.curve, h);
}

/// h_{V*} = r_t - h_V.
inline CurveFlowField conjugate(const CurveFlowField& v) {
    const auto hv = motion_of_field(v);
    std::vector<double> h(hv.values.size());
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = v.curve->radius[i] - hv.values[i];
    return field_from_motion(v.curve, h);
}

/// Element j U / k^n of the finite submonoid V_{n,k}, kept as the exact
/// fraction j / k^n.
struct ScaleLevel {
    std::int64_t j = 0;
    std::int64_t denom = 1;

    // Clipped sum within one V_{n,k}.
    friend ScaleLevel operator+(const ScaleLevel& a, const ScaleLevel& b) {
        if (a.denom != b.denom) throw DataError("scale levels come from different submonoids");
        return {std::min(a.j + b.j, a.denom), a.denom};
    }
    friend bool operator==(const ScaleLevel& a, const ScaleLevel& b) {
        return a.j * b.denom == b.j * a.denom;
    }
    double fraction() const { return static_cast<double>(j) / static_cast<double>(denom); }
};

inline std::int64_t int_pow(std::int64_t k, int n) {
    std::int64_t p = 1;
    for (int e = 0; e < n; ++e) p *= k;
    return p;
}

/// All levels {0, 1/k^n, ..., 1} of V_{n,k}.
inline std::vector<ScaleLevel> scale_levels(int n, int k) {
    if (n < 0 || k < 2) throw ConfigError("scale_levels: need n >= 0 and k >= 2");
    const std::int64_t d = int_pow(k, n);
    std::vector<ScaleLevel> out;
    for (std::int64_t j = 0; j <= d; ++j) out.push_back({j, d});
    return out;
}

struct QuantizedField {
    CurveFlowField field;
    ScaleLevel level;
    double error = 0.0;  // max_i |h_V - h_quantized|
};

/// Nearest element of V_{n,k} to a parallel field, ties rounding down. The
/// level index comes from the mean radius; each sample then uses j r_t / k^n.
inline QuantizedField multiscale_quantize(const CurveFlowField& v, int n, int k, double spread_tol = 0.05) {
    const Curve& c = *v.curve;
    if (n < 0 || k < 2) throw ConfigError("multiscale_quantize: need n >= 0 and k >= 2");
    if (c.radius_spread() > spread_tol) throw DataError("multiscale_quantize: curvature is not constant");
    const auto hv = motion_of_field(v);
    const double r = c.mean_radius();
    if (!is_parallel(v, 1e-9 * std::max(1.0, r)))
        throw DataError("multiscale_quantize: field is not parallel; approximate it first");
    const std::int64_t d = int_pow(k, n);
    const double x = r > 0.0 ? hv.values.front() / r * static_cast<double>(d) : 0.0;
    std::int64_t j = static_cast<std::int64_t>(std::floor(x));
    if (x - static_cast<double>(j) > 0.5) ++j;
    j = std::clamp<std::int64_t>(j, 0, d);
    QuantizedField q;
    q.level = {j, d};
    std::vector<double> h(c.domain);
    for (int i = 0; i < c.domain; ++i) {
        h[i] = static_cast<double>(j) * c.radius[i] / static_cast<double>(d);
        q.error = std::max(q.error, std::abs(h[i] - hv.values[i]));
    }
    q.field = field_from_motion(v.curve, h);
    return q;
}

struct ResampleResult {
    std::vector<double> times;
    std::vector<double> steps;  // delta_t between consecutive outputs
    std::vector<double> arcs;   // s at each output time
    std::vector<Image> frames;  // empty when the curve has no frames
    bool dropped_partial = false;
    double leftover = 0.0;      // arc length left after the last full step
};

/// Time stamps spaced so consecutive outputs are exactly h apart in arc
/// length, found by bisection on the monotone s(t).
inline ResampleResult resample_uniform(const Curve& c, double h) {
    if (!(h > 0.0)) throw DataError("resample_uniform: h must be > 0");
    if (c.length() < h) throw DataError("resample_uniform: curve is shorter than one step");
    // Every sample a full step can start from must reach h; near the end r_i is
    // cut by the curve itself and no full step remains.
    for (int i = 0; i < c.samples(); ++i)
        if (c.arc[i] + h <= c.length() && h > c.radius[i])
            throw DataError("resample_uniform: h exceeds the restricted radius " + std::to_string(c.radius[i]) +
                            " at sample " + std::to_string(i));
    ResampleResult out;
    double t = c.times.front();
    double s = 0.0;
    out.times.push_back(t);
    out.arcs.push_back(s);
    const double tol = 1e-12 * (c.times.back() - c.times.front());
    while (s + h <= c.length() * (1.0 + 1e-12)) {
        const double goal = std::min(s + h, c.length());
        double lo = t, hi = c.times.back();
        for (int it = 0; it < 200 && hi - lo > tol; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (c.arc_at(mid) < goal)
                lo = mid;
            else
                hi = mid;
        }
        out.steps.push_back(hi - t);
        t = hi;
        s = goal;
        out.times.push_back(t);
        out.arcs.push_back(s);
    }
    out.leftover = c.length() - s;
    out.dropped_partial = out.leftover > 1e-9 * c.length();
    if (c.has_frames())
        for (double a : out.arcs) out.frames.push_back(c.render(a));
    return out;
}

/// Scene-to-arc model s(t) = K (v0 (t - t0) + a (t - t0)^2 / 2), fitted from the
/// first two hops. Returns the products K v0 and K a.
struct AccelerationFit {
    double kv0 = 0.0;
    double ka = 0.0;
};

inline AccelerationFit fit_constant_acceleration(const Curve& c) {
    if (c.samples() < 3) throw DataError("fit_constant_acceleration: need at least 3 samples");
    const double d1 = c.times[1] - c.times[0], d2 = c.times[2] - c.times[0];
    const double s1 = c.arc[1], s2 = c.arc[2];
    // [d1 d1^2/2; d2 d2^2/2] [kv0; ka] = [s1; s2]
    const double det = d1 * d2 * d2 / 2.0 - d2 * d1 * d1 / 2.0;
    return {(s1 * d2 * d2 / 2.0 - s2 * d1 * d1 / 2.0) / det, (d1 * s2 - d2 * s1) / det};
}

/// Positive root of K (v delta + a delta^2 / 2) = h.
inline double closed_form_step(double v, double a, double k, double h) {
    if (!(k > 0.0) || !(h > 0.0)) throw DataError("closed_form_step: need K > 0 and h > 0");
    if (a == 0.0) {
        if (!(v > 0.0)) throw DataError("closed_form_step: no forward motion");
        return h / (k * v);
    }
    const double q = v / a;
    return -q + std::sqrt(q * q + 2.0 * h / (a * k));
}

} // namespace ofmkit
