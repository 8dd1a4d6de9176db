#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "ofmkit/image.hpp"
#include "ofmkit/scene.hpp"

using namespace ofmkit;
using testing_helpers::counted_centroid;
using testing_helpers::disk;

namespace {

Image sinusoid(int w, int h, double wavelength, double shift = 0.0) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img(x, y) = 0.5 + 0.5 * std::sin(2.0 * M_PI * (x + shift) / wavelength);
    return img;
}

FlowField smooth_flow(int w, int h, double amp, double phase) {
    FlowField f(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            f.vx[f.index(x, y)] = amp * std::sin(2.0 * M_PI * y / 64.0 + phase);
            f.vy[f.index(x, y)] = amp * std::cos(2.0 * M_PI * x / 80.0 + phase);
        }
    return f;
}

std::size_t pixel_count(const Image& img) {
    std::size_t n = 0;
    for (double v : img.values()) n += v > 0.5;
    return n;
}

} // namespace

TEST(Image, RejectsInvalidShapesAndValues) {
    EXPECT_THROW(Image(0, 5), DataError);
    EXPECT_THROW(Image(2, 2, std::vector<double>{0, 1, 2}), DataError);
    EXPECT_THROW(Image(1, 1, std::vector<double>{std::nan("")}), DataError);
}

TEST(Warp, ZeroFlowIsIdentity) {
    const Image img = sinusoid(40, 30, 7.3);
    EXPECT_EQ(warp(img, FlowField::zeros(40, 30)), img);
}

TEST(Warp, ConstantFlowMovesDiskAgainstTheFlow) {
    const Image img = disk(256, 100, 100, 20);
    const Image out = warp(img, FlowField::constant(256, 256, 10, 0));
    const auto [cx, cy] = counted_centroid(out);
    EXPECT_NEAR(cx, 90.0, 1e-9);
    EXPECT_NEAR(cy, 100.0, 1e-9);
}

TEST(Warp, SubpixelShiftOfSinusoid) {
    const Image img = sinusoid(128, 16, 32.0);
    const Image out = warp(img, FlowField::constant(128, 16, 0.5, 0));
    const Image truth = sinusoid(128, 16, 32.0, 0.5);
    double err = 0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 127; ++x) err = std::max(err, std::abs(out(x, y) - truth(x, y)));
    EXPECT_LE(err, 0.01);
}

TEST(Warp, OutsideReadsZeroUnlessClamped) {
    const Image img(8, 8, 1.0);
    EXPECT_EQ(warp(img, FlowField::constant(8, 8, 100, 0))(3, 3), 0.0);
    EXPECT_EQ(warp(img, FlowField::constant(8, 8, 100, 0), Border::clamp)(3, 3), 1.0);
}

TEST(Warp, DimensionMismatch) {
    EXPECT_THROW(warp(Image(4, 4), FlowField::zeros(4, 5)), DataError);
}

TEST(Compose, IdentityAndAdditivity) {
    const FlowField g = smooth_flow(50, 40, 2.0, 0.3);
    EXPECT_EQ(compose_flows(FlowField::zeros(50, 40), g), g);
    const FlowField c = compose_flows(FlowField::constant(50, 40, 1.5, -2), FlowField::constant(50, 40, 0.25, 3));
    for (std::size_t k = 0; k < c.size(); ++k) {
        EXPECT_EQ(c.vx[k], 1.75);
        EXPECT_EQ(c.vy[k], 1.0);
    }
}

TEST(Compose, MatchesDoubleWarpOnSmoothImage) {
    const int w = 128, h = 128;
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img(x, y) = 0.5 + 0.25 * std::sin(x / 9.0) * std::cos(y / 11.0);
    const FlowField f = smooth_flow(w, h, 2.0, 0.0), g = smooth_flow(w, h, 1.5, 1.1);
    const Image twice = warp(warp(img, f), g);
    const Image once = warp(img, compose_flows(f, g));
    double err = 0;
    for (int y = 8; y < h - 8; ++y)
        for (int x = 8; x < w - 8; ++x) err = std::max(err, std::abs(twice(x, y) - once(x, y)));
    EXPECT_LE(err, 0.01);
}

TEST(ScaleFlow, Cases) {
    const FlowField f = FlowField::constant(5, 5, 10, 0);
    EXPECT_EQ(scale_flow(f, 0.0), FlowField::zeros(5, 5));
    EXPECT_EQ(scale_flow(f, 1.0), f);
    EXPECT_EQ(scale_flow(f, 0.5), FlowField::constant(5, 5, 5, 0));
    EXPECT_THROW(scale_flow(f, std::nan("")), ConfigError);
}

TEST(L2Distance, ZeroOnSelfAndDisjointDisks) {
    const Image a = disk(256, 80, 128, 20), b = disk(256, 180, 128, 20);
    EXPECT_EQ(l2_distance(a, a), 0.0);
    // Symmetric difference of disjoint binary disks is every covered pixel.
    const double counted = std::sqrt(static_cast<double>(pixel_count(a) + pixel_count(b)));
    EXPECT_DOUBLE_EQ(l2_distance(a, b), counted);
    const double continuum = std::sqrt(2.0 * M_PI * 400.0);
    EXPECT_LE(std::abs(l2_distance(a, b) - continuum) / continuum, 0.02);
}

TEST(L2Distance, SaturatesBeyondTwoRadii) {
    const Image base = disk(256, 70, 128, 20);
    const double d50 = l2_distance(base, disk(256, 120, 128, 20));
    const double d60 = l2_distance(base, disk(256, 130, 128, 20));
    EXPECT_LE(std::abs(d50 - d60) / d60, 1e-6);
}

TEST(L2Distance, IncreasingThenConstant) {
    const Image base = disk(256, 60, 128, 20);
    std::vector<double> d;
    for (int s = 0; s <= 60; ++s) d.push_back(l2_distance(base, disk(256, 60 + s, 128, 20)));
    for (int s = 1; s < 40; ++s) EXPECT_LT(d[s - 1], d[s]) << "separation " << s;
    for (int s = 40; s <= 60; ++s) EXPECT_EQ(d[s], d[40]) << "separation " << s;
}

TEST(L2Distance, MetricAxiomsOnRandomTriples) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Image> im;
        for (int k = 0; k < 3; ++k) {
            Image x(12, 9);
            for (double& v : x.values()) v = uniform01(rng);
            im.push_back(x);
        }
        EXPECT_EQ(l2_distance(im[0], im[1]), l2_distance(im[1], im[0]));
        EXPECT_LE(l2_distance(im[0], im[2]), l2_distance(im[0], im[1]) + l2_distance(im[1], im[2]) + 1e-9);
    }
    EXPECT_THROW(l2_distance(Image(3, 3), Image(3, 4)), DataError);
}

TEST(L2Distance, PixelSizeScales) {
    const Image a(4, 4, 0.0), b(4, 4, 1.0);
    EXPECT_DOUBLE_EQ(l2_distance(a, b, 0.5), 2.0);
}

TEST(Generate, DiskPixelCount) {
    const Image img = disk(256, 127.5, 127.5, 20);
    const double n = static_cast<double>(pixel_count(img));
    EXPECT_LE(std::abs(n - M_PI * 400.0), 20.0);
    for (double v : img.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(Generate, AntialiasedDiskCoversExactArea) {
    DiskScene s;
    s.cx = 101.3;
    s.cy = 97.8;
    s.antialias = true;
    const Image img = generate(s);
    double total = 0;
    for (double v : img.values()) total += v;
    EXPECT_NEAR(total, M_PI * 400.0, 1e-8);
}

TEST(Generate, DiskOutsideCanvasIsRejected) {
    DiskScene s;
    s.cx = 10;
    EXPECT_THROW(generate(s), ConfigError);
}

TEST(Generate, IdentityAffineIsTheReference) {
    AffineScene s;
    s.width = s.height = 32;
    const Image img = generate(s);
    const Texture tex(s.texture);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const auto c = centered_coordinates(x, y, 32, 32);
            EXPECT_EQ(img(x, y), tex(256 + c[0], 256 + c[1]));
        }
}

TEST(Generate, CropsAreExactTranslations) {
    PatchCropScene a;
    a.offset_x = 40;
    a.offset_y = 50;
    PatchCropScene b = a;
    b.offset_x += 10;
    const Image ia = generate(a), ib = generate(b);
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x + 10 < a.width; ++x) EXPECT_EQ(ia(x + 10, y), ib(x, y));
}

TEST(Generate, CropOutsideTextureIsRejected) {
    PatchCropScene s;
    s.offset_x = 500;
    EXPECT_THROW(generate(s), ConfigError);
}

TEST(Generate, Deterministic) {
    PatchCropScene s;
    EXPECT_EQ(generate(s), generate(s));
    PatchCropScene t = s;
    t.texture.seed = 8;
    EXPECT_NE(generate(s), generate(t));
}

TEST(IntensityCentroid, WeightedCentroid) {
    const Image img = disk(128, 40, 70, 10);
    const auto [x, y] = intensity_centroid(img);
    EXPECT_NEAR(x, 40, 1e-9);
    EXPECT_NEAR(y, 70, 1e-9);
    EXPECT_THROW(intensity_centroid(Image(4, 4)), DataError);
}
