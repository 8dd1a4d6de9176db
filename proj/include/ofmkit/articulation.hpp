#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "ofmkit/error.hpp"
#include "ofmkit/image.hpp"
#include "ofmkit/scene.hpp"

namespace ofmkit {

// Affine articulation f(x) = A x + t on the unit square, sampled at the
// midpoints of an n x n grid. Parameter order throughout:
// theta = (A11, A12, A21, A22, t1, t2).
struct AffineParam {
    Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
    Eigen::Vector2d t = Eigen::Vector2d::Zero();

    Eigen::Matrix<double, 6, 1> theta() const {
        Eigen::Matrix<double, 6, 1> v;
        v << a(0, 0), a(0, 1), a(1, 0), a(1, 1), t(0), t(1);
        return v;
    }
    static AffineParam from_theta(const Eigen::Matrix<double, 6, 1>& v) {
        AffineParam p;
        p.a << v(0), v(1), v(2), v(3);
        p.t << v(4), v(5);
        return p;
    }
};

inline double midpoint(int i, int n) { return (i + 0.5) / n; }

inline FlowField affine_flow(const AffineParam& p, int resolution) {
    if (resolution < 1) throw ConfigError("affine_flow: resolution must be >= 1");
    FlowField f(resolution, resolution);
    for (int iy = 0; iy < resolution; ++iy)
        for (int ix = 0; ix < resolution; ++ix) {
            const double x = midpoint(ix, resolution), y = midpoint(iy, resolution);
            const std::size_t k = f.index(ix, iy);
            f.vx[k] = p.a(0, 0) * x + p.a(0, 1) * y + p.t(0);
            f.vy[k] = p.a(1, 0) * x + p.a(1, 1) * y + p.t(1);
        }
    return f;
}

/// sqrt(integral of |f1 - f2|^2) by the midpoint rule, each cell weighing `cell_area`.
inline double flow_l2(const FlowField& f1, const FlowField& f2, double cell_area) {
    detail::require_same_shape(f1, f2, "flow_l2");
    double sum = 0.0;
    for (std::size_t k = 0; k < f1.size(); ++k) {
        const double dx = f1.vx[k] - f2.vx[k], dy = f1.vy[k] - f2.vy[k];
        sum += dx * dx + dy * dy;
    }
    return std::sqrt(sum * cell_area);
}

struct MomentMatrix {
    Eigen::MatrixXd closed_form;  // empty when no closed form exists
    Eigen::MatrixXd quadrature;
    int resolution = 0;
    std::vector<double> eigenvalues;  // of the quadrature matrix, descending

    double max_deviation() const { return (closed_form - quadrature).cwiseAbs().maxCoeff(); }
};

namespace detail {

inline std::vector<double> descending_eigenvalues(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
    std::vector<double> ev(solver.eigenvalues().data(), solver.eigenvalues().data() + solver.eigenvalues().size());
    std::reverse(ev.begin(), ev.end());
    return ev;
}

} // namespace detail

/// Moments of [x, y, 1] over the unit square: closed form and midpoint rule.
inline MomentMatrix affine_sigma(int resolution = 512) {
    if (resolution < 2) throw ConfigError("affine_sigma: resolution must be >= 2");
    MomentMatrix m;
    m.resolution = resolution;
    m.closed_form.resize(3, 3);
    m.closed_form << 1.0 / 3.0, 1.0 / 4.0, 1.0 / 2.0,
                     1.0 / 4.0, 1.0 / 3.0, 1.0 / 2.0,
                     1.0 / 2.0, 1.0 / 2.0, 1.0;
    m.quadrature = Eigen::MatrixXd::Zero(3, 3);
    const double w = 1.0 / (static_cast<double>(resolution) * resolution);
    // Separable sums, accumulated along each axis.
    double sx = 0.0, sxx = 0.0;
    for (int i = 0; i < resolution; ++i) {
        const double x = midpoint(i, resolution);
        sx += x;
        sxx += x * x;
    }
    const double n = resolution;
    const double ex = sx * n * w, exx = sxx * n * w, exy = sx * sx * w;
    m.quadrature << exx, exy, ex,
                    exy, exx, ex,
                    ex, ex, 1.0;
    m.eigenvalues = detail::descending_eigenvalues(m.quadrature);
    return m;
}

/// 6 x 6 quadratic form in theta built from the 3 x 3 moments: the same block
/// acts on (A11, A12, t1) and on (A21, A22, t2).
inline Eigen::Matrix<double, 6, 6> affine_form(const Eigen::Matrix3d& sigma) {
    Eigen::Matrix<double, 6, 6> m = Eigen::Matrix<double, 6, 6>::Zero();
    const std::array<std::array<int, 3>, 2> rows{{{0, 1, 4}, {2, 3, 5}}};
    for (const auto& idx : rows)
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m(idx[r], idx[c]) = sigma(r, c);
    return m;
}

inline Eigen::Matrix<double, 6, 6> affine_form() { return affine_form(affine_sigma(2).closed_form); }

/// |theta1 - theta2|_Sigma, the exact L2 distance between the two affine flows.
inline double affine_distance(const AffineParam& p1, const AffineParam& p2) {
    static const Eigen::Matrix<double, 6, 6> form = affine_form();
    const Eigen::Matrix<double, 6, 1> d = p1.theta() - p2.theta();
    return std::sqrt(std::max(0.0, d.dot(form * d)));
}

// Pose articulation of a camera with identity intrinsics. Image-plane points
// x = (x, y) lie on a centered n x n midpoint grid of half-width `half_width`.
// omega is read through
//   Omega = [[0, -wx, wy], [wx, 0, -wz], [-wy, wz, 0]],
// so wx turns the image about the optical axis.
struct PoseParam {
    Eigen::Vector3d omega = Eigen::Vector3d::Zero();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

struct PoseGrid {
    int n = 64;
    double half_width = 0.5;
    double z_av = 1.0;
    std::vector<double> depth;  // lambda_ref per grid point, row-major

    double coord(int i) const { return -half_width + (i + 0.5) * (2.0 * half_width / n); }
    double cell_area() const {
        const double h = 2.0 * half_width / n;
        return h * h;
    }
    double lambda(int ix, int iy) const { return depth[static_cast<std::size_t>(iy) * n + ix]; }

    void validate() const {
        if (n < 1 || !(half_width > 0.0)) throw ConfigError("pose grid: invalid size");
        if (!(z_av > 0.0)) throw ConfigError("pose grid: z_av must be > 0");
        if (depth.size() != static_cast<std::size_t>(n) * n) throw ConfigError("pose grid: depth map size mismatch");
        for (double d : depth)
            if (!(d > 0.0) || !std::isfinite(d)) throw ConfigError("pose grid: depth must be finite and > 0");
    }

    static PoseGrid constant(int n, double half_width, double z_av, double lambda) {
        PoseGrid g;
        g.n = n;
        g.half_width = half_width;
        g.z_av = z_av;
        g.depth.assign(static_cast<std::size_t>(n) * n, lambda);
        return g;
    }
};

inline Eigen::Matrix3d omega_matrix(const Eigen::Vector3d& w) {
    Eigen::Matrix3d m;
    m << 0.0, -w(0), w(1),
         w(0), 0.0, -w(2),
         -w(1), w(2), 0.0;
    return m;
}

/// exp(Omega) by the Rodrigues formula.
inline Eigen::Matrix3d rotation(const Eigen::Vector3d& w) {
    const Eigen::Matrix3d k = omega_matrix(w);
    const double theta = w.norm();
    if (theta == 0.0) return Eigen::Matrix3d::Identity();
    return Eigen::Matrix3d::Identity() + std::sin(theta) / theta * k + (1.0 - std::cos(theta)) / (theta * theta) * k * k;
}

/// Exact perspective flow P(lambda R [x; 1] + t) - P(lambda [x; 1]).
inline FlowField pose_flow(const PoseParam& p, const PoseGrid& g) {
    g.validate();
    const Eigen::Matrix3d r = rotation(p.omega);
    FlowField f(g.n, g.n);
    for (int iy = 0; iy < g.n; ++iy)
        for (int ix = 0; ix < g.n; ++ix) {
            const double x = g.coord(ix), y = g.coord(iy);
            const Eigen::Vector3d moved = g.lambda(ix, iy) * (r * Eigen::Vector3d(x, y, 1.0)) + p.t;
            if (!(moved(2) > 0.0)) throw NumericalError("pose_flow: point leaves the front of the camera");
            const std::size_t k = f.index(ix, iy);
            f.vx[k] = moved(0) / moved(2) - x;
            f.vy[k] = moved(1) / moved(2) - y;
        }
    return f;
}

/// Per-point linear map of the weak-perspective flow over (wx, wy, wz, tx, ty).
inline Eigen::Matrix<double, 2, 5> pose_jacobian(double x, double y, double lambda, double z_av) {
    Eigen::Matrix<double, 2, 5> a;
    a << -lambda * y, lambda, 0.0, 1.0, 0.0,
         lambda * x, 0.0, -lambda, 0.0, 1.0;
    return a / z_av;
}

/// Weak-perspective, small-rotation flow: P_wp((I + Omega) X + t) - P_wp(X).
/// Linear in (omega, t_x, t_y); t_z drops out.
inline FlowField pose_flow_wp(const PoseParam& p, const PoseGrid& g) {
    g.validate();
    Eigen::Matrix<double, 5, 1> theta;
    theta << p.omega(0), p.omega(1), p.omega(2), p.t(0), p.t(1);
    FlowField f(g.n, g.n);
    for (int iy = 0; iy < g.n; ++iy)
        for (int ix = 0; ix < g.n; ++ix) {
            const Eigen::Vector2d v = pose_jacobian(g.coord(ix), g.coord(iy), g.lambda(ix, iy), g.z_av) * theta;
            const std::size_t k = f.index(ix, iy);
            f.vx[k] = v(0);
            f.vy[k] = v(1);
        }
    return f;
}

/// Sigma_pose = integral of A(x)^T A(x) over the grid.
inline MomentMatrix pose_sigma(const PoseGrid& g) {
    g.validate();
    Eigen::Matrix<double, 5, 5> s = Eigen::Matrix<double, 5, 5>::Zero();
    for (int iy = 0; iy < g.n; ++iy)
        for (int ix = 0; ix < g.n; ++ix) {
            const auto a = pose_jacobian(g.coord(ix), g.coord(iy), g.lambda(ix, iy), g.z_av);
            s += a.transpose() * a;
        }
    MomentMatrix m;
    m.resolution = g.n;
    m.quadrature = s * g.cell_area();
    m.eigenvalues = detail::descending_eigenvalues(m.quadrature);
    return m;
}

inline Eigen::Matrix<double, 5, 1> pose_theta(const PoseParam& p) {
    Eigen::Matrix<double, 5, 1> v;
    v << p.omega(0), p.omega(1), p.omega(2), p.t(0), p.t(1);
    return v;
}

inline double mahalanobis(const Eigen::VectorXd& d, const Eigen::MatrixXd& sigma) {
    return std::sqrt(std::max(0.0, d.dot(sigma * d)));
}

enum class IsometryModel { affine, pose_wp, pose_perspective };

struct IsometryReport {
    int pairs = 0;
    double magnitude = 0.0;
    double max_abs_deviation = 0.0;  // max |d_flow - d_model|
    double max_rel_deviation = 0.0;  // max |d_flow - d_model| / d_model
    double mean_rel_deviation = 0.0;
};

struct IsometryOptions {
    std::uint64_t seed = 1;
    int resolution = 512;   // affine quadrature grid
    PoseGrid pose = PoseGrid::constant(64, 0.05, 2.0, 2.0);
};

namespace detail {

// Random unit direction in R^dim.
inline Eigen::VectorXd unit_direction(std::mt19937_64& rng, int dim) {
    Eigen::VectorXd v(dim);
    do {
        for (int i = 0; i < dim; ++i) v(i) = normal01(rng);
    } while (v.norm() == 0.0);
    return v / v.norm();
}

inline void accumulate(IsometryReport& r, double measured, double model) {
    const double abs_dev = std::abs(measured - model);
    const double rel = model > 0.0 ? abs_dev / model : (abs_dev > 0.0 ? 1.0 : 0.0);
    r.max_abs_deviation = std::max(r.max_abs_deviation, abs_dev);
    r.max_rel_deviation = std::max(r.max_rel_deviation, rel);
    r.mean_rel_deviation += rel;
    ++r.pairs;
}

inline PoseParam pose_from(const Eigen::VectorXd& v) {
    PoseParam p;
    p.omega << v(0), v(1), v(2);
    p.t << v(3), v(4), 0.0;
    return p;
}

} // namespace detail

/// Compares flow-field L2 distances with the model's Mahalanobis distances on
/// random parameter pairs of size `magnitude`. Pose pairs keep t_z = 0 and the
/// directions depend only on the seed, so reports at two magnitudes differ only
/// in scale.
inline IsometryReport verify_isometry(IsometryModel model, int count, double magnitude, const IsometryOptions& opts = {}) {
    if (count < 1) throw ConfigError("verify_isometry: need at least one pair");
    if (!(magnitude >= 0.0)) throw ConfigError("verify_isometry: magnitude must be >= 0");
    std::mt19937_64 rng(opts.seed);
    IsometryReport r;
    r.magnitude = magnitude;
    if (model == IsometryModel::affine) {
        const double cell = 1.0 / (static_cast<double>(opts.resolution) * opts.resolution);
        for (int k = 0; k < count; ++k) {
            const auto p1 = AffineParam::from_theta(magnitude * detail::unit_direction(rng, 6));
            const auto p2 = AffineParam::from_theta(magnitude * detail::unit_direction(rng, 6));
            detail::accumulate(r, flow_l2(affine_flow(p1, opts.resolution), affine_flow(p2, opts.resolution), cell),
                               affine_distance(p1, p2));
        }
    } else {
        const auto sigma = pose_sigma(opts.pose).quadrature;
        for (int k = 0; k < count; ++k) {
            const auto p1 = detail::pose_from(magnitude * detail::unit_direction(rng, 5));
            const auto p2 = detail::pose_from(magnitude * detail::unit_direction(rng, 5));
            const double model_d = mahalanobis(pose_theta(p1) - pose_theta(p2), sigma);
            const double measured = model == IsometryModel::pose_wp
                                        ? flow_l2(pose_flow_wp(p1, opts.pose), pose_flow_wp(p2, opts.pose), opts.pose.cell_area())
                                        : flow_l2(pose_flow(p1, opts.pose), pose_flow(p2, opts.pose), opts.pose.cell_area());
            detail::accumulate(r, measured, model_d);
        }
    }
    r.mean_rel_deviation /= r.pairs;
    return r;
}

struct ScalingReport {
    IsometryReport small, large;
    double exponent = 0.0;  // log(dev_large / dev_small) / log(large / small), absolute deviations
};

/// Growth of the perspective-versus-weak-perspective deviation with rotation
/// size, from the same random directions at two magnitudes.
inline ScalingReport pose_locality(double small, double large, int count, const IsometryOptions& opts = {}) {
    if (!(small > 0.0 && large > small)) throw ConfigError("pose_locality: need 0 < small < large");
    ScalingReport s;
    s.small = verify_isometry(IsometryModel::pose_perspective, count, small, opts);
    s.large = verify_isometry(IsometryModel::pose_perspective, count, large, opts);
    s.exponent = std::log(s.large.max_abs_deviation / s.small.max_abs_deviation) / std::log(large / small);
    return s;
}

/// sup |pose_flow - pose_flow_wp| for one pose.
inline double pose_sup_deviation(const PoseParam& p, const PoseGrid& g) {
    const auto exact = pose_flow(p, g), wp = pose_flow_wp(p, g);
    double m = 0.0;
    for (std::size_t k = 0; k < exact.size(); ++k)
        m = std::max(m, std::hypot(exact.vx[k] - wp.vx[k], exact.vy[k] - wp.vy[k]));
    return m;
}

} // namespace ofmkit
