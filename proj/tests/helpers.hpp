#pragma once

#include <cmath>
#include <utility>

#include "ofmkit/image.hpp"
#include "ofmkit/scene.hpp"

namespace testing_helpers {

inline ofmkit::Image disk(int size, double cx, double cy, double r, bool white_background = false) {
    ofmkit::DiskScene s;
    s.width = s.height = size;
    s.cx = cx;
    s.cy = cy;
    s.radius = r;
    if (white_background) {
        s.foreground = 0.0;
        s.background = 1.0;
    }
    return ofmkit::generate(s);
}

// Centroid of pixels above 0.5, by counting.
inline std::pair<double, double> counted_centroid(const ofmkit::Image& img, bool invert = false) {
    double n = 0, sx = 0, sy = 0;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const bool on = invert ? img(x, y) < 0.5 : img(x, y) > 0.5;
            if (on) {
                n += 1;
                sx += x;
                sy += y;
            }
        }
    return {sx / n, sy / n};
}

inline double max_abs_diff(const ofmkit::Image& a, const ofmkit::Image& b) {
    double m = 0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.values()[k] - b.values()[k]));
    return m;
}

} // namespace testing_helpers
