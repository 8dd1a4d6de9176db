#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"
#include "ofmkit/curve.hpp"
#include "ofmkit/scene.hpp"

using namespace ofmkit;

namespace {

std::vector<double> motion(const CurveFlowField& f) { return motion_of_field(f).values; }

std::vector<double> random_feasible(std::mt19937_64& rng, const Curve& c) {
    std::vector<double> h(c.domain);
    for (int i = 0; i < c.domain; ++i) h[i] = uniform01(rng) * c.radius[i];
    return h;
}

// s(t) = t^2 sampled every dt on [0, t_end]: constant acceleration a = 2, K = 1.
CurvePtr quadratic_curve(double dt, double t_end) {
    const int n = static_cast<int>(std::lround(t_end / dt));
    std::vector<double> times(n + 1), hops(n), radii(n + 1);
    for (int i = 0; i <= n; ++i) times[i] = i * dt;
    for (int i = 0; i < n; ++i) hops[i] = times[i + 1] * times[i + 1] - times[i] * times[i];
    const double total = t_end * t_end;
    for (int i = 0; i <= n; ++i) radii[i] = std::min(4.0, total - times[i] * times[i]);
    return curve_from_geometry(times, hops, radii);
}

Image crop_at(double ox, int size, double contrast = 1.0) {
    PatchCropScene p;
    p.width = p.height = size;
    p.offset_x = ox;
    p.offset_y = 150;
    Image im = generate(p);
    for (double& v : im.values()) v = 0.5 + contrast * (v - 0.5);
    return im;
}

} // namespace

TEST(CurveGeometry, UniformCurveAndValidation) {
    const CurvePtr c = uniform_curve(10, 2.0, 3);
    EXPECT_EQ(c->samples(), 11);
    EXPECT_EQ(c->domain, 8);
    EXPECT_DOUBLE_EQ(c->length(), 20.0);
    EXPECT_EQ(restricted_radius(*c, 10), 0.0);
    EXPECT_EQ(restricted_radius(*c, 3), 6.0);
    EXPECT_EQ(restricted_radius(*c, 9), 2.0);
    EXPECT_EQ(c->radius_spread(), 0.0);
    EXPECT_THROW(restricted_radius(*c, 11), DataError);
    EXPECT_THROW(curve_from_geometry({0, 1}, {1}, {5, 0}), DataError);      // radius past the end
    EXPECT_THROW(curve_from_geometry({0, 0}, {1}, {1, 0}), DataError);      // time not increasing
    EXPECT_THROW(curve_from_geometry({0, 1, 2}, {1, 0}, {1, 0, 0}), DataError);  // zero hop
    EXPECT_THROW(uniform_curve(3, 1.0, 4), ConfigError);
}

TEST(CurveGeometry, LocateAndArcAt) {
    const CurvePtr c = curve_from_geometry({0, 1, 3}, {2, 4}, {2, 4, 0});
    EXPECT_EQ(c->locate(0.0), (std::pair<int, double>{0, 0.0}));
    EXPECT_EQ(c->locate(3.0), (std::pair<int, double>{1, 0.25}));
    EXPECT_EQ(c->locate(6.0), (std::pair<int, double>{1, 1.0}));
    EXPECT_DOUBLE_EQ(c->arc_at(2.0), 4.0);
    EXPECT_THROW(c->locate(7.0), DataError);
}

TEST(RestrictedRadius, ThreeConsistentHopsOnACropCurve) {
    // 128 px crops with four pyramid levels stay consistent up to 30 px, not 40.
    std::vector<Image> frames;
    std::vector<double> times;
    for (int i = 0; i < 7; ++i) {
        frames.push_back(crop_at(100 + 10 * i, 128));
        times.push_back(i);
    }
    FlowConfig cfg;
    cfg.levels = 4;
    const CurvePtr c = curve_from_frames(frames, times, cfg);
    for (int i = 0; i + 1 < c->samples(); ++i) EXPECT_NEAR(c->arc[i + 1] - c->arc[i], 10.0, 0.5);
    for (int i = 0; i <= 3; ++i) EXPECT_NEAR(restricted_radius(*c, i), 30.0, 1.0) << i;
    EXPECT_NEAR(restricted_radius(*c, 4), 20.0, 1.0);
    EXPECT_EQ(restricted_radius(*c, 6), 0.0);
}

TEST(RestrictedRadius, LowTextureFrameObstructsTransport) {
    // 96 px crops with three levels reach two hops; frame 4
    // (half contrast) only stays consistent with its direct neighbors.
    std::vector<Image> frames;
    std::vector<double> times;
    for (int i = 0; i < 7; ++i) {
        frames.push_back(crop_at(100 + 10 * i, 96, i == 4 ? 0.5 : 1.0));
        times.push_back(i);
    }
    FlowConfig cfg;
    cfg.levels = 3;
    const CurvePtr c = curve_from_frames(frames, times, cfg);
    EXPECT_NEAR(restricted_radius(*c, 1), 20.0, 1.0);
    EXPECT_NEAR(restricted_radius(*c, 2), 10.0, 1.0);
    EXPECT_LT(restricted_radius(*c, 2), restricted_radius(*c, 1));
}

TEST(RestrictedRadius, BrokenHopIsAnError) {
    std::vector<Image> frames{crop_at(100, 64), crop_at(180, 64)};
    EXPECT_THROW(curve_from_frames(frames, {0, 1}, FlowConfig{}), DataError);
    EXPECT_THROW(curve_from_frames(frames, {0}, FlowConfig{}), DataError);
}

TEST(FieldFromMotion, CanonicalFieldsAndShift) {
    const CurvePtr c = uniform_curve(12, 1.5, 4);
    const CurveFlowField z = zero_field(c), u = unit_field(c);
    for (int i = 0; i < c->domain; ++i) {
        EXPECT_EQ(motion(z)[i], 0.0);
        EXPECT_EQ(motion(u)[i], c->radius[i]);
    }
    const CurveFlowField shift = field_from_motion(c, std::vector<double>(c->domain, 1.5));
    for (int i = 0; i < c->domain; ++i) {
        const CurvePoint& p = shift.targets[i];
        EXPECT_DOUBLE_EQ(c->arc[p.anchor] + p.offset, c->arc[i + 1]);
    }
}

TEST(FieldFromMotion, RoundTripOnRandomFeasibleMotion) {
    std::mt19937_64 rng(21);
    const CurvePtr c = curve_from_geometry({0, 0.5, 1.7, 2.0, 3.1, 4.0, 5.5}, {1, 2.5, 0.5, 3, 1, 2},
                                           {3.5, 3, 3.5, 4, 3, 2, 0});
    for (int trial = 0; trial < 1000; ++trial) {
        const auto h = random_feasible(rng, *c);
        const CurveFlowField f = field_from_motion(c, h);
        EXPECT_EQ(motion(f), h);
        for (int i = 0; i < c->domain; ++i) EXPECT_LE(motion(f)[i], c->radius[i]);
    }
}

TEST(FieldFromMotion, ReportsEveryInfeasibleSample) {
    const CurvePtr c = uniform_curve(6, 1.0, 2);
    std::vector<double> h(c->domain, 0.5);
    h[1] = 2.5;
    h[3] = -0.1;
    try {
        field_from_motion(c, h);
        FAIL() << "expected an error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("1,3"), std::string::npos) << e.what();
    }
    EXPECT_THROW(field_from_motion(c, {0.0}), DataError);
}

TEST(IsParallel, Cases) {
    const CurvePtr c = uniform_curve(10, 1.0, 4);
    EXPECT_TRUE(is_parallel(zero_field(c), 0.0));
    std::vector<double> ramp(c->domain);
    for (int i = 0; i < c->domain; ++i) ramp[i] = c->times[i] * 0.5;
    EXPECT_FALSE(is_parallel(field_from_motion(c, ramp), 1.0));
    EXPECT_TRUE(is_parallel(field_from_motion(c, std::vector<double>(c->domain, 0.4 * 4.0)), 0.0));
}

TEST(ParallelTranslate, FeasibleAndPinched) {
    const CurvePtr c = uniform_curve(10, 1.0, 4);
    EXPECT_EQ(motion(parallel_translate(c, 0, 0.0)), motion(zero_field(c)));
    EXPECT_TRUE(is_parallel(parallel_translate(c, 2, 2.0), 0.0));
    EXPECT_THROW(parallel_translate(c, 0, 4.0), DataError);

    // r = 30 everywhere except a pinch of 5 at sample 3.
    std::vector<double> times, hops, radii;
    for (int i = 0; i <= 12; ++i) times.push_back(i);
    hops.assign(12, 10.0);
    for (int i = 0; i <= 12; ++i) radii.push_back(std::min(30.0, 120.0 - 10.0 * i));
    radii[3] = 5.0;
    const CurvePtr pinched = curve_from_geometry(times, hops, radii, 10);
    try {
        parallel_translate(pinched, 0, 10.0);
        FAIL() << "expected an error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("sample 3"), std::string::npos) << e.what();
    }
    EXPECT_NO_THROW(parallel_translate(pinched, 0, 4.0));
}

TEST(ApproxCost, ClosedFormsAndQuadrature) {
    MotionFunction ramp{{0.0, 1.0}, {0.0, 1.0}};
    EXPECT_DOUBLE_EQ(approx_cost(ramp, 0.0), 0.5);
    EXPECT_DOUBLE_EQ(approx_cost(ramp, 0.5), 0.25);
    MotionFunction flat{{0.0, 1.0, 2.0}, {0.3, 0.3, 0.3}};
    EXPECT_EQ(approx_cost(flat, 0.3), 0.0);
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        MotionFunction hv;
        double t = 0;
        for (int i = 0; i < 8; ++i) {
            hv.times.push_back(t);
            hv.values.push_back(uniform01(rng));
            t += uniform(rng, 0.1, 1.0);
        }
        const double level = uniform01(rng);
        // Midpoint rule on a fine grid.
        const int m = 400000;
        const double span = hv.times.back() - hv.times.front();
        double sum = 0;
        for (int k = 0; k < m; ++k) sum += std::abs(hv(hv.times.front() + (k + 0.5) * span / m) - level);
        EXPECT_NEAR(approx_cost(hv, level), sum * span / m, 1e-6);
    }
}

TEST(BestParallelApprox, MedianCases) {
    EXPECT_DOUBLE_EQ(weighted_median(MotionFunction{{0.0, 1.0}, {0.0, 1.0}}), 0.5);
    // 0.2 on 60% of the time, 0.8 on 40%, with a near-instant switch.
    const MotionFunction blocks{{0.0, 0.6, 0.6 + 1e-9, 1.0}, {0.2, 0.2, 0.8, 0.8}};
    const double med = weighted_median(blocks);
    EXPECT_NEAR(med, 0.2, 1e-9);
    for (int k = 0; k <= 10000; ++k) EXPECT_LE(approx_cost(blocks, med), approx_cost(blocks, k * 1e-4) + 1e-12);
    // Exact half split on a plateau: the lower end of the median interval.
    const MotionFunction even{{0.0, 1.0, 2.0}, {0.2, 0.2, 0.2}};
    EXPECT_DOUBLE_EQ(weighted_median(even), 0.2);
}

TEST(BestParallelApprox, ConstantAndRampFields) {
    std::vector<double> times;
    for (int i = 0; i <= 10; ++i) times.push_back(0.1 * i);
    std::vector<double> radii;
    for (int i = 0; i <= 10; ++i) radii.push_back(std::min(0.6, 2.0 - 0.2 * i));
    const CurvePtr c = curve_from_geometry(times, std::vector<double>(10, 0.2), radii, 7);
    const ParallelApprox flat = best_parallel_approx(field_from_motion(c, std::vector<double>(7, 0.3)));
    EXPECT_DOUBLE_EQ(flat.median, 0.3);
    EXPECT_EQ(flat.bound, 0.0);
    EXPECT_TRUE(is_parallel(flat.field, 0.0));

    // h_V(t) = t on [0, 0.6] over the domain samples.
    std::vector<double> ramp(7);
    for (int i = 0; i < 7; ++i) ramp[i] = i / 10.0;
    const ParallelApprox a = best_parallel_approx(field_from_motion(c, ramp));
    EXPECT_NEAR(a.median, 0.3, 1e-12);
    EXPECT_NEAR(a.bound, 0.09, 1e-12);
    EXPECT_LE(a.bound, realized_error(field_from_motion(c, ramp), a.field) + 1e-12);
}

TEST(BestParallelApprox, MedianMinimizesTheBoundOnRandomMotion) {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        MotionFunction hv;
        double t = 0;
        for (int i = 0; i < 9; ++i) {
            hv.times.push_back(t);
            hv.values.push_back(uniform01(rng));
            t += uniform(rng, 0.05, 1.0);
        }
        const double cost = approx_cost(hv, weighted_median(hv));
        for (int k = 0; k <= 10000; ++k) ASSERT_LE(cost, approx_cost(hv, k * 1e-4) + 1e-12);
    }
}

TEST(BestParallelApprox, ClipsToTheRadiusAndNeedsConstantCurvature) {
    const CurvePtr c = uniform_curve(8, 1.0, 2);
    const ParallelApprox full = best_parallel_approx(unit_field(c));
    EXPECT_EQ(full.level, 2.0);
    std::vector<double> radii{4, 2, 2, 2, 2, 1, 0};
    const CurvePtr bent = curve_from_geometry({0, 1, 2, 3, 4, 5, 6}, std::vector<double>(6, 1.0), radii);
    EXPECT_THROW(best_parallel_approx(zero_field(bent)), DataError);
    EXPECT_NO_THROW(best_parallel_approx(zero_field(bent), 10.0));
}

TEST(LowerBound, PointwiseGapIsTheArcDistanceBetweenTargets) {
    std::mt19937_64 rng(24);
    const CurvePtr c = uniform_curve(20, 1.0, 5);
    for (int trial = 0; trial < 50; ++trial) {
        const CurveFlowField v = field_from_motion(c, random_feasible(rng, *c));
        const double level = uniform01(rng) * 5.0;
        const CurveFlowField w = field_from_motion(c, std::vector<double>(c->domain, level));
        for (int i = 0; i < c->domain; ++i) {
            const double e = std::abs((c->arc[v.targets[i].anchor] + v.targets[i].offset) -
                                      (c->arc[w.targets[i].anchor] + w.targets[i].offset));
            EXPECT_LE(std::abs(motion(v)[i] - level), e + 1e-12);
        }
        EXPECT_LE(approx_cost(motion_of_field(v), level), realized_error(v, w) + 1e-12);
    }
}

TEST(Monoid, LawsOnAConstantCurvatureCurve) {
    std::mt19937_64 rng(25);
    const CurvePtr c = uniform_curve(24, 0.5, 6);
    const CurveFlowField z = zero_field(c), u = unit_field(c);
    auto near = [](const std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t i = 0; i < a.size(); ++i)
            if (std::abs(a[i] - b[i]) > 1e-12) return false;
        return true;
    };
    for (int trial = 0; trial < 200; ++trial) {
        const CurveFlowField a = field_from_motion(c, random_feasible(rng, *c));
        const CurveFlowField b = field_from_motion(c, random_feasible(rng, *c));
        const CurveFlowField d = field_from_motion(c, random_feasible(rng, *c));
        EXPECT_TRUE(near(motion(monoid_add(a, b)), motion(monoid_add(b, a))));
        EXPECT_TRUE(near(motion(monoid_add(monoid_add(a, b), d)), motion(monoid_add(a, monoid_add(b, d)))));
        EXPECT_TRUE(near(motion(monoid_add(a, z)), motion(a)));
        EXPECT_TRUE(near(motion(monoid_add(a, u)), motion(u)));
        EXPECT_TRUE(near(motion(conjugate(conjugate(a))), motion(a)));
        EXPECT_TRUE(near(motion(monoid_add(a, conjugate(a))), motion(u)));
        const CurveFlowField p = parallel_translate(c, 0, uniform01(rng) * 2.9);
        const CurveFlowField q = parallel_translate(c, 0, uniform01(rng) * 2.9);
        EXPECT_TRUE(is_parallel(monoid_add(p, q), 1e-12));
    }
    EXPECT_EQ(motion(conjugate(z)), motion(u));
    EXPECT_EQ(motion(conjugate(u)), motion(z));
}

TEST(Monoid, ClippedSumAndConjugateValues) {
    const CurvePtr c = curve_from_geometry({0, 1, 2, 3}, {0.7, 0.7, 0.7}, {0.7, 0.7, 0.7, 0}, 2);
    const auto v = field_from_motion(c, {0.3, 0.3}), w = field_from_motion(c, {0.5, 0.5});
    EXPECT_EQ(motion(monoid_add(v, w)), (std::vector<double>{0.7, 0.7}));
    EXPECT_NEAR(motion(conjugate(v))[0], 0.4, 1e-15);
    EXPECT_THROW(monoid_add(v, zero_field(uniform_curve(3, 1.0, 1))), DataError);
}

TEST(Monoid, ParallelsDoNotCloseWhenCurvatureVaries) {
    const CurvePtr c = curve_from_geometry({0, 1, 2, 3, 4}, std::vector<double>(4, 1.0), {3, 1.5, 2, 1, 0});
    const auto v = parallel_translate(c, 0, 0.9), w = parallel_translate(c, 0, 0.9);
    EXPECT_TRUE(is_parallel(v, 0.0));
    EXPECT_FALSE(is_parallel(monoid_add(v, w), 1e-9));
}

TEST(Multiscale, QuantizationExamples) {
    const CurvePtr c = uniform_curve(16, 1.0, 4);
    const QuantizedField z = multiscale_quantize(zero_field(c), 3, 2);
    EXPECT_EQ(z.level, (ScaleLevel{0, 8}));
    EXPECT_EQ(motion(z.field), motion(zero_field(c)));
    const QuantizedField q = multiscale_quantize(field_from_motion(c, std::vector<double>(c->domain, 0.37 * 4)), 3, 2);
    EXPECT_EQ(q.level.j, 3);
    EXPECT_EQ(q.level.denom, 8);
    EXPECT_NEAR(q.error, 0.005 * 4, 1e-12);
    // Exactly between 1/8 and 2/8 rounds down.
    EXPECT_EQ(multiscale_quantize(field_from_motion(c, std::vector<double>(c->domain, 0.1875 * 4)), 3, 2).level.j, 1);
    std::vector<double> ramp(c->domain);
    for (int i = 0; i < c->domain; ++i) ramp[i] = 0.1 * i;
    EXPECT_THROW(multiscale_quantize(field_from_motion(c, ramp), 3, 2), DataError);
    EXPECT_THROW(multiscale_quantize(zero_field(c), 3, 1), ConfigError);
}

TEST(Multiscale, ErrorBoundOnRandomParallels) {
    std::mt19937_64 rng(26);
    const CurvePtr c = uniform_curve(16, 1.0, 4);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(uniform01(rng) * 4), k = 2 + static_cast<int>(uniform01(rng) * 3);
        const double level = uniform01(rng) * 4.0;
        const QuantizedField q = multiscale_quantize(field_from_motion(c, std::vector<double>(c->domain, level)), n, k);
        EXPECT_LE(q.error, 4.0 / (2.0 * static_cast<double>(int_pow(k, n))) + 1e-12);
    }
}

TEST(Multiscale, ClosureAndNesting) {
    for (int n = 0; n <= 4; ++n) {
        const auto levels = scale_levels(n, 2);
        for (const ScaleLevel& a : levels)
            for (const ScaleLevel& b : levels) {
                const ScaleLevel s = a + b;
                EXPECT_TRUE(std::find(levels.begin(), levels.end(), s) != levels.end());
            }
        const auto finer = scale_levels(n + 1, 2);
        for (const ScaleLevel& a : levels)
            EXPECT_TRUE(std::find(finer.begin(), finer.end(), a) != finer.end());
    }
    // Quantized fields add inside the submonoid.
    const CurvePtr c = uniform_curve(16, 1.0, 4);
    std::mt19937_64 rng(27);
    for (int trial = 0; trial < 100; ++trial) {
        const auto qa = multiscale_quantize(parallel_translate(c, 0, uniform01(rng) * 3.9), 3, 2);
        const auto qb = multiscale_quantize(parallel_translate(c, 0, uniform01(rng) * 3.9), 3, 2);
        const auto sum = monoid_add(qa.field, qb.field);
        EXPECT_EQ(multiscale_quantize(sum, 3, 2).error, 0.0);
        EXPECT_EQ(multiscale_quantize(sum, 3, 2).level, qa.level + qb.level);
    }
    EXPECT_THROW((ScaleLevel{1, 2} + ScaleLevel{1, 4}), DataError);
}

TEST(Resample, UniformCurveKeepsItsStamps) {
    const CurvePtr c = uniform_curve(8, 2.5, 2, 0.5);
    const ResampleResult r = resample_uniform(*c, 2.5);
    ASSERT_EQ(r.times.size(), c->times.size());
    for (std::size_t i = 0; i < r.times.size(); ++i) EXPECT_NEAR(r.times[i], c->times[i], 1e-9);
    EXPECT_FALSE(r.dropped_partial);
}

TEST(Resample, ConstantAccelerationSteps) {
    const CurvePtr c = quadratic_curve(0.01, 4.0);
    const ResampleResult r = resample_uniform(*c, 1.0);
    EXPECT_NEAR(r.steps[0], 1.0, 1e-3);
    EXPECT_NEAR(r.steps[1], std::sqrt(2.0) - 1.0, 1e-3 * (std::sqrt(2.0) - 1.0));
    EXPECT_NEAR(closed_form_step(0.0, 2.0, 1.0, 1.0), 1.0, 1e-15);
    EXPECT_NEAR(closed_form_step(2.0, 2.0, 1.0, 1.0), std::sqrt(2.0) - 1.0, 1e-15);
    for (std::size_t i = 0; i + 1 < r.arcs.size(); ++i) EXPECT_NEAR(c->arc_at(r.times[i + 1]) - c->arc_at(r.times[i]), 1.0, 1e-3);
    EXPECT_FALSE(r.dropped_partial);
    const ResampleResult odd = resample_uniform(*c, 1.5);
    EXPECT_TRUE(odd.dropped_partial);
    EXPECT_NEAR(odd.leftover, 1.0, 1e-9);
}

TEST(Resample, FitRecoversTheQuadratic) {
    const CurvePtr c = quadratic_curve(0.5, 3.0);
    const AccelerationFit f = fit_constant_acceleration(*c);
    EXPECT_NEAR(f.kv0, 0.0, 1e-12);
    EXPECT_NEAR(f.ka, 2.0, 1e-12);
    const CurvePtr shifted = curve_from_geometry({0, 1, 2}, {3, 5}, {8, 5, 0});  // s = 2t + t^2
    const AccelerationFit g = fit_constant_acceleration(*shifted);
    EXPECT_NEAR(g.kv0, 2.0, 1e-12);
    EXPECT_NEAR(g.ka, 2.0, 1e-12);
}

TEST(Resample, Errors) {
    const CurvePtr c = uniform_curve(4, 1.0, 2);
    EXPECT_THROW(resample_uniform(*c, 0.0), DataError);
    EXPECT_THROW(resample_uniform(*c, 2.5), DataError);
    EXPECT_THROW(resample_uniform(*c, 5.0), DataError);
    EXPECT_THROW(closed_form_step(0.0, 0.0, 1.0, 1.0), DataError);
    EXPECT_THROW(closed_form_step(1.0, 1.0, 0.0, 1.0), DataError);
}

TEST(Resample, RendersFramesAlongADiskVideo) {
    // Disk moving 4 px per frame; resampling at 6 px lands between frames.
    std::vector<Image> frames;
    std::vector<double> times;
    for (int i = 0; i < 5; ++i) {
        frames.push_back(testing_helpers::disk(128, 40 + 4 * i, 64, 16));
        times.push_back(i);
    }
    FlowConfig cfg;
    cfg.levels = 3;
    CurveFromFramesOptions o;
    o.max_reach = 2;
    const CurvePtr c = curve_from_frames(frames, times, cfg, o);
    const ResampleResult r = resample_uniform(*c, 6.0);
    ASSERT_EQ(r.frames.size(), r.times.size());
    for (std::size_t i = 0; i < r.frames.size(); ++i) {
        const double expected = 40 + 4 * r.times[i];
        EXPECT_NEAR(testing_helpers::counted_centroid(r.frames[i]).first, expected, 0.5) << i;
    }
}
