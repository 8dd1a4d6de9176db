// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ofmkit/articulation.hpp"
#include "ofmkit/curve.hpp"
#include "ofmkit/flow.hpp"
#include "ofmkit/graph.hpp"
#include "ofmkit/manifold.hpp"
#include "ofmkit/scene.hpp"

using namespace ofmkit;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

Image disk(int size, double cx, double cy, double r, bool antialias, bool white = false) {
    DiskScene s;
    s.width = s.height = size;
    s.cx = cx;
    s.cy = cy;
    s.radius = r;
    s.antialias = antialias;
    if (white) {
        s.foreground = 0.0;
        s.background = 1.0;
    }
    return generate(s);
}

Image crop(double ox, double oy, int size) {
    PatchCropScene s;
    s.width = s.height = size;
    s.offset_x = ox;
    s.offset_y = oy;
    return generate(s);
}

std::vector<double> random_feasible(std::mt19937_64& rng, const Curve& c) {
    std::vector<double> h(c.domain);
    for (int i = 0; i < c.domain; ++i) h[i] = uniform01(rng) * c.radius[i];
    return h;
}

// Criteria 2 and 3 share the crop grid and its flow metric.
struct CropGrid {
    std::vector<Image> images;
    std::vector<std::vector<double>> params;
    DistanceMatrix flow;
    double seconds = 0.0;
};

const CropGrid& crop_grid() {
    static const CropGrid g = [] {
        CropGrid out;
        const auto start = std::chrono::steady_clock::now();
        for (int j = 0; j < 5; ++j)
            for (int i = 0; i < 5; ++i) {
                out.images.push_back(crop(200.0 + 10.0 * i, 200.0 + 10.0 * j, 128));
                out.params.push_back({200.0 + 10.0 * i, 200.0 + 10.0 * j});
            }
        FlowConfig cfg;
        cfg.levels = 4;
        out.flow = flow_metric(build_graph(out.images, cfg));
        out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return out;
    }();
    return g;
}

Outcome saturation() {
    const auto start = std::chrono::steady_clock::now();
    const Image base = disk(256, 100, 128, 20, false);
    std::vector<double> d;
    for (int sep = 10; sep <= 60; sep += 10) d.push_back(l2_distance(base, disk(256, 100.0 + sep, 128, 20, false)));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool increasing = true;
    for (int k = 1; k <= 3; ++k) increasing = increasing && d[k] > d[k - 1];  // 10 .. 40
    double flat = 0.0;
    for (int k = 4; k < 6; ++k) flat = std::max(flat, std::abs(d[k] - d[3]) / d[3]);
    return {increasing && flat <= 1e-6 && secs < 1.0,
            fmt("d(10..40) increasing=%g, max rel change beyond 40 px %.2e, %.2f s", increasing, flat, secs)};
}

Outcome isometry() {
    const CropGrid& g = crop_grid();
    if (!g.flow.all_finite()) return {false, "flow graph is disconnected"};
    const Proportionality p = proportionality(g.flow, g.params);
    return {p.pearson >= 0.99 && p.max_rel_deviation <= 0.05 && g.seconds < 120.0,
            fmt("pearson %.5f, best-fit slope %.4f, max rel deviation %.4f, %.1f s", p.pearson, p.slope,
                p.max_rel_deviation, g.seconds)};
}

Outcome embedding() {
    const CropGrid& g = crop_grid();
    Eigen::MatrixXd truth(25, 2);
    for (int k = 0; k < 25; ++k) truth.row(k) << g.params[k][0], g.params[k][1];
    const double diam = point_diameter(truth);
    const double flow_res = procrustes_rms(embed(g.flow, 2).coords, truth) / diam;
    const DistanceMatrix amb = ambient_metric(g.images, 4);
    const double amb_res = amb.all_finite() ? procrustes_rms(embed(amb, 2).coords, truth) / diam : infinity;
    return {flow_res <= 0.05 && amb_res > flow_res,
            fmt("Procrustes rms / grid diameter: flow %.4f, ambient %.4f", flow_res, amb_res)};
}

Outcome interpolation() {
    const Image a = disk(128, 54, 64, 20, false, true), b = disk(128, 74, 64, 20, false, true);
    const Image truth = disk(128, 64, 64, 20, false, true);
    FlowConfig cfg;
    cfg.consistency_threshold = 1.0;
    const double flow_err = l2_distance(interpolate(a, b, 0.5, cfg), truth);
    const double blend_err = l2_distance(linear_blend(a, b, 0.5), truth);
    return {flow_err <= blend_err / 5.0, fmt("midpoint L2 error: flow %.4f, blend %.4f (ratio %.4f)", flow_err, blend_err, flow_err / blend_err)};
}

Outcome karcher() {
    std::mt19937_64 rng(11);
    std::vector<Image> disks;
    double mx = 0, my = 0;
    for (int k = 0; k < 20; ++k) {
        const double x = 63.5 + uniform(rng, -12, 12), y = 63.5 + uniform(rng, -12, 12);
        disks.push_back(disk(128, x, y, 16, true));
        mx += x / 20;
        my += y / 20;
    }
    const KarcherResult r = karcher_mean(disks, FlowConfig{});
    const auto [cx, cy] = intensity_centroid(r.mean);
    const double err = std::hypot(cx - mx, cy - my);
    return {r.converged && r.iterations <= 50 && err <= 1.0,
            fmt("centroid error %.4f px, %g iterations, converged=%g", err, r.iterations, r.converged)};
}

Outcome estimation() {
    TemplateSet t;
    for (int y = 20; y <= 100; y += 20)
        for (int x = 20; x <= 100; x += 20) {
            t.images.push_back(disk(128, x, y, 16, true));
            t.params.push_back({double(x), double(y)});
        }
    std::mt19937_64 rng(12);
    double worst_disk = 0.0;
    for (int q = 0; q < 5; ++q) {
        const double x = uniform(rng, 30, 90), y = uniform(rng, 30, 90);
        const ParameterEstimate e = estimate_parameter(t, disk(128, x, y, 16, true), FlowConfig{});
        worst_disk = std::max(worst_disk, std::hypot(e.theta[0] - x, e.theta[1] - y));
    }

    auto affine_image = [](const AffineParam& p) {
        AffineScene s;
        s.width = s.height = 96;
        s.a = {p.a(0, 0), p.a(0, 1), p.a(1, 0), p.a(1, 1)};
        s.t = {p.t(0), p.t(1)};
        return generate(s);
    };
    TemplateSet at;
    at.kind = ArticulationKind::affine;
    at.images.push_back(affine_image(AffineParam{}));
    at.params.push_back(std::vector<double>(6, 0.0));
    std::vector<AffineParam> truths(4);
    truths[0].a << 0.0, -0.05, 0.05, 0.0;
    truths[0].t << 3.0, 1.0;
    for (int k = 1; k < 4; ++k) {
        for (int i = 0; i < 4; ++i) truths[k].a(i / 2, i % 2) = 0.03 * normal01(rng);
        truths[k].t << 2.0 * normal01(rng), 2.0 * normal01(rng);
    }
    double worst_a = 0.0, worst_t = 0.0;
    for (const AffineParam& truth : truths) {
        const ParameterEstimate e = estimate_parameter(at, affine_image(truth), FlowConfig{});
        const AffineParam got = AffineParam::from_theta(Eigen::Map<const Eigen::Matrix<double, 6, 1>>(e.theta.data()));
        worst_a = std::max(worst_a, (got.a - truth.a).norm() / truth.a.norm());
        worst_t = std::max(worst_t, (got.t - truth.t).norm() / truth.t.norm());
    }
    return {worst_disk <= 0.5 && worst_a <= 0.05 && worst_t <= 0.05,
            fmt("disk worst error %.3f px over 5 queries; affine worst rel error A %.4f, t %.4f over 4 queries", worst_disk,
                worst_a, worst_t)};
}

Outcome round_trip() {
    std::mt19937_64 rng(7);
    const CurvePtr c = curve_from_geometry({0, 0.5, 1.7, 2.0, 3.1, 4.0, 5.5}, {1, 2.5, 0.5, 3, 1, 2}, {3.5, 3, 3.5, 4, 3, 2, 0});
    int exact = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto h = random_feasible(rng, *c);
        exact += motion_of_field(field_from_motion(c, h)).values == h;
    }
    return {exact == 1000, fmt("%g of 1000 round trips exact", exact)};
}

Outcome median() {
    std::mt19937_64 rng(8);
    int beaten = 0;
    double worst = -infinity;
    for (int trial = 0; trial < 1000; ++trial) {
        MotionFunction hv;
        double t = 0;
        const int knots = 2 + static_cast<int>(uniform01(rng) * 10);
        for (int i = 0; i < knots; ++i) {
            hv.times.push_back(t);
            hv.values.push_back(uniform01(rng));
            t += uniform(rng, 0.05, 1.0);
        }
        const double cost = approx_cost(hv, weighted_median(hv));
        bool ok = true;
        for (int k = 0; k < 10000; ++k) {
            const double gap = cost - approx_cost(hv, k / 9999.0);
            worst = std::max(worst, gap);
            if (gap > 1e-9) ok = false;
        }
        beaten += ok;
    }
    return {beaten == 1000, fmt("median optimal in %g of 1000 trials; largest excess over a grid point %.2e", beaten, worst)};
}

Outcome monoid() {
    std::mt19937_64 rng(9);
    const CurvePtr c = uniform_curve(24, 0.5, 6);
    const CurveFlowField z = zero_field(c), u = unit_field(c);
    double worst = 0.0;
    auto gap = [&](const CurveFlowField& a, const CurveFlowField& b) {
        const auto ha = motion_of_field(a).values, hb = motion_of_field(b).values;
        for (std::size_t i = 0; i < ha.size(); ++i) worst = std::max(worst, std::abs(ha[i] - hb[i]));
    };
    bool closed = true;
    for (int trial = 0; trial < 500; ++trial) {
        const auto a = field_from_motion(c, random_feasible(rng, *c));
        const auto b = field_from_motion(c, random_feasible(rng, *c));
        const auto d = field_from_motion(c, random_feasible(rng, *c));
        gap(monoid_add(monoid_add(a, b), d), monoid_add(a, monoid_add(b, d)));
        gap(monoid_add(a, b), monoid_add(b, a));
        gap(monoid_add(a, z), a);
        gap(monoid_add(a, u), u);
        gap(conjugate(conjugate(a)), a);
        const auto p = parallel_translate(c, 0, uniform01(rng) * 3.0);
        const auto q = parallel_translate(c, 0, uniform01(rng) * 3.0);
        closed = closed && is_parallel(monoid_add(p, q), 1e-12);
    }
    const CurvePtr bent = curve_from_geometry({0, 1, 2, 3, 4}, std::vector<double>(4, 1.0), {3, 1.5, 2, 1, 0});
    const auto pv = parallel_translate(bent, 0, 0.9);
    const bool counterexample = is_parallel(pv, 0.0) && !is_parallel(monoid_add(pv, pv), 1e-9);
    return {worst <= 1e-12 && closed && counterexample,
            fmt("max law violation %.2e, parallel closure=%g, varying-curvature counterexample found=%g", worst, closed,
                counterexample)};
}

Outcome multiscale() {
    bool closure = true, nesting = true;
    for (int n = 0; n <= 4; ++n) {
        const auto levels = scale_levels(n, 2), finer = scale_levels(n + 1, 2);
        for (const ScaleLevel& a : levels) {
            for (const ScaleLevel& b : levels)
                closure = closure && std::find(levels.begin(), levels.end(), a + b) != levels.end();
            nesting = nesting && std::find(finer.begin(), finer.end(), a) != finer.end();
        }
    }
    std::mt19937_64 rng(10);
    const double r = 4.0;
    const CurvePtr c = uniform_curve(16, 1.0, 4);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = static_cast<int>(uniform01(rng) * 5), k = 2 + static_cast<int>(uniform01(rng) * 3);
        const auto q = multiscale_quantize(parallel_translate(c, 0, uniform01(rng) * r), n, k);
        worst = std::max(worst, q.error / (r / (2.0 * static_cast<double>(int_pow(k, n)))));
    }
    return {closure && nesting && worst <= 1.0 + 1e-12,
            fmt("closure=%g nesting=%g for k=2, n<=4; worst error / (r / 2k^n) = %.4f", closure, nesting, worst)};
}

Outcome resampling() {
    // Disk with x(t) = 20 + t^2 / 2: v_t = t px per frame, a = 1.
    std::vector<Image> frames;
    std::vector<double> times;
    for (int t = 0; t <= 10; ++t) {
        frames.push_back(disk(128, 20.0 + 0.5 * t * t, 64, 16, true));
        times.push_back(t);
    }
    FlowConfig cfg;
    cfg.levels = 3;
    const CurvePtr c = curve_from_frames(frames, times, cfg);
    // Past t = 6 only single hops are flow-reachable (r about 6), so h stays below that.
    const double h = 5.0;
    const ResampleResult r = resample_uniform(*c, h);
    double worst_step = 0.0;
    for (std::size_t k = 0; k + 1 < r.frames.size(); ++k) {
        const FlowResult f = flow_pair(r.frames[k], r.frames[k + 1], cfg);
        const double hop =
            0.5 * (flow_norm(f.flow, object_support(r.frames[k + 1])) + flow_norm(f.backward, object_support(r.frames[k])));
        worst_step = std::max(worst_step, std::abs(hop - h));
    }

    // delta at v_t = 0 and 2 on the fitted model, found by bisection, against the closed form.
    const AccelerationFit fit = fit_constant_acceleration(*c);
    double worst_delta = 0.0;
    for (double v : {0.0, 2.0}) {
        const double t0 = (v - fit.kv0) / fit.ka;
        const double dt = 1e-3, span = 10.0;
        const int n = static_cast<int>(span / dt);
        std::vector<double> ts(n + 1), hops(n), radii(n + 1);
        auto s = [&](double t) { return fit.kv0 * t + 0.5 * fit.ka * t * t; };
        for (int i = 0; i <= n; ++i) ts[i] = t0 + i * dt;
        for (int i = 0; i < n; ++i) hops[i] = s(ts[i + 1]) - s(ts[i]);
        std::vector<double> arc(n + 1, 0.0);
        for (int i = 0; i < n; ++i) arc[i + 1] = arc[i] + hops[i];
        for (int i = 0; i <= n; ++i) radii[i] = arc[n] - arc[i];
        const ResampleResult m = resample_uniform(*curve_from_geometry(ts, hops, radii), h);
        const double closed = closed_form_step(v, fit.ka, 1.0, h);
        worst_delta = std::max(worst_delta, std::abs(m.steps[0] - closed) / closed);
    }
    return {worst_step <= 0.5 && worst_delta <= 1e-3,
            fmt("%g steps of h=5: worst |step - h| %.3f px; fitted K a %.4f; worst delta rel error %.2e", double(r.steps.size()),
                worst_step, fit.ka, worst_delta)};
}

Outcome affine_model() {
    const MomentMatrix s = affine_sigma(512);
    const IsometryReport r = verify_isometry(IsometryModel::affine, 100, 1.0);
    return {s.max_deviation() <= 1e-6 && r.max_rel_deviation <= 1e-4 && r.pairs == 100,
            fmt("sigma max abs deviation %.2e; distance max rel deviation %.2e over %g pairs", s.max_deviation(),
                r.max_rel_deviation, r.pairs)};
}

Outcome pose_model() {
    const IsometryReport wp = verify_isometry(IsometryModel::pose_wp, 100, 0.05);
    const ScalingReport loc = pose_locality(0.01, 0.1, 100);
    return {wp.max_rel_deviation <= 1e-6 && std::abs(loc.exponent - 2.0) <= 0.4,
            fmt("WP max rel deviation %.2e; perspective deviation exponent %.3f", wp.max_rel_deviation, loc.exponent)};
}

Outcome one_pixel_shift() {
    const FlowField f = estimate_flow(crop(100, 100, 128), crop(101, 100, 128), FlowConfig{});
    double e = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) e += std::hypot(f.vx[k] - 1.0, f.vy[k]);
    e /= static_cast<double>(f.size());
    return {e <= 0.2, fmt("mean endpoint error %.4f px", e)};
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"disk-distance saturation", saturation},
        {"flow-metric isometry", isometry},
        {"embedding", embedding},
        {"interpolation", interpolation},
        {"karcher mean", karcher},
        {"parameter estimation", estimation},
        {"motion function round trip", round_trip},
        {"weighted median optimality", median},
        {"monoid laws", monoid},
        {"multiscale submonoids", multiscale},
        {"uniform resampling", resampling},
        {"affine isometry", affine_model},
        {"pose locality", pose_model},
        {"one pixel shift", one_pixel_shift},
    };
    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !o.pass;
        std::printf("%s criterion %2zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures ? 1 : 0;
}
