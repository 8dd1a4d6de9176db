#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ofmkit/error.hpp"
#include "ofmkit/flow.hpp"
#include "ofmkit/graph.hpp"
#include "ofmkit/image.hpp"
#include "ofmkit/parallel.hpp"
#include "ofmkit/scene.hpp"

namespace ofmkit {

/// Pixelwise (1 - t) I1 + t I2.
inline Image linear_blend(const Image& i1, const Image& i2, double t) {
    detail::require_same_shape(i1, i2, "linear_blend");
    Image out(i1.width(), i1.height());
    for (std::size_t k = 0; k < out.size(); ++k) out.values()[k] = (1.0 - t) * i1.values()[k] + t * i2.values()[k];
    return out;
}

/// Point at fraction t along the flow path from I1 to I2: I1 warped by t * phi,
/// with phi carried onto the intermediate frame's grid.
inline Image interpolate(const Image& i1, const Image& i2, double t, const FlowConfig& cfg) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("interpolate: t must lie in [0, 1]");
    auto r = flow_between(i1, i2, cfg);
    if (!r) throw DataError("interpolate: images are not related by a consistent flow; route through geodesic_nodes");
    return warp(i1, scale_flow(transport_flow(r->flow, t), t), Border::clamp);
}

/// Interpolation along the graph geodesic between nodes i and j. Time is split
/// across hops in proportion to their weights.
inline Image interpolate_path(const FlowGraph& g, int i, int j, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("interpolate_path: t must lie in [0, 1]");
    const auto path = geodesic_nodes(g, i, j);
    if (path.size() == 1) return g.nodes[i];
    std::vector<double> cum{0.0};
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
        const auto e = g.find_edge(path[k], path[k + 1]);
        cum.push_back(cum.back() + g.edges[*e].weight);
    }
    const double total = cum.back();
    if (total <= 0.0) return g.nodes[i];
    const double s = t * total;
    std::size_t hop = 0;
    while (hop + 2 < cum.size() && s > cum[hop + 1]) ++hop;
    const double len = cum[hop + 1] - cum[hop];
    const double local = len > 0.0 ? std::clamp((s - cum[hop]) / len, 0.0, 1.0) : 0.0;
    if (local == 0.0) return g.nodes[path[hop]];
    return interpolate(g.nodes[path[hop]], g.nodes[path[hop + 1]], local, g.config);
}

struct Embedding {
    Eigen::MatrixXd coords;        // n x d
    std::vector<double> eigenvalues;  // full spectrum, descending
    bool degenerate = false;       // some leading eigenvalue was not positive
};

/// Classical multidimensional scaling of a distance matrix.
inline Embedding embed(const DistanceMatrix& d, int dims) {
    if (dims < 1 || dims > d.n) throw ConfigError("embed: dimension must lie in [1, n]");
    if (!d.all_finite()) throw DataError("embed: distance matrix has disconnected pairs");
    const int n = d.n;
    Eigen::MatrixXd sq(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sq(i, j) = d(i, j) * d(i, j);
    const Eigen::MatrixXd centering = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
    const Eigen::MatrixXd gram = -0.5 * centering * sq * centering;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) throw NumericalError("embed: eigendecomposition failed");
    Embedding out;
    out.coords = Eigen::MatrixXd::Zero(n, dims);
    // Eigen returns ascending order.
    for (int k = n - 1; k >= 0; --k) out.eigenvalues.push_back(solver.eigenvalues()(k));
    for (int c = 0; c < dims; ++c) {
        const double lambda = out.eigenvalues[c];
        if (!(lambda > 0.0)) {
            out.degenerate = true;
            continue;
        }
        out.coords.col(c) = solver.eigenvectors().col(n - 1 - c) * std::sqrt(lambda);
    }
    return out;
}

namespace detail {

// Squared residual of the best similarity (rotation or reflection, isotropic
// scale, translation) mapping X onto Y, and the spread of Y about its mean.
inline std::pair<double, double> procrustes_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) throw DataError("procrustes_residual: shape mismatch");
    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
    const double sy = yc.squaredNorm();
    if (!(sy > 0.0)) throw DataError("procrustes_residual: target has zero variance");
    const double sx = xc.squaredNorm();
    if (!(sx > 0.0)) return {sy, sy};
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(xc.transpose() * yc, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::MatrixXd rot = svd.matrixU() * svd.matrixV().transpose();
    const double scale = svd.singularValues().sum() / sx;
    // Direct residual; sy - tr^2 / sx cancels catastrophically near a perfect fit.
    return {(scale * xc * rot - yc).squaredNorm(), sy};
}

} // namespace detail

/// sqrt(min |s R x + c - y|^2 / sum |y - mean y|^2) over similarities.
inline double procrustes_residual(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    const auto [res, spread] = detail::procrustes_fit(x, y);
    return std::sqrt(res / spread);
}

/// Root-mean-square per-point distance after the best similarity alignment, in
/// the units of Y.
inline double procrustes_rms(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    return std::sqrt(detail::procrustes_fit(x, y).first / static_cast<double>(y.rows()));
}

/// Largest pairwise distance between rows.
inline double point_diameter(const Eigen::MatrixXd& y) {
    double d = 0.0;
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        for (Eigen::Index j = i + 1; j < y.rows(); ++j) d = std::max(d, (y.row(i) - y.row(j)).norm());
    return d;
}

/// How well d_M tracks parameter distance over all finite pairs i < j.
struct Proportionality {
    int pairs = 0;
    double pearson = 0.0;
    double slope = 0.0;              // least-squares C in d_M ~ C |dtheta|, through the origin
    double max_rel_deviation = 0.0;  // max |d_M - C |dtheta|| / (C |dtheta|)
};

inline Proportionality proportionality(const DistanceMatrix& d, const std::vector<std::vector<double>>& params) {
    if (static_cast<int>(params.size()) != d.n) throw DataError("proportionality: need one parameter vector per node");
    std::vector<double> xs, ys;
    for (int i = 0; i < d.n; ++i)
        for (int j = i + 1; j < d.n; ++j) {
            if (!std::isfinite(d(i, j))) continue;
            if (params[i].size() != params[j].size()) throw DataError("proportionality: parameter dimensions differ");
            double q = 0.0;
            for (std::size_t k = 0; k < params[i].size(); ++k) q += (params[i][k] - params[j][k]) * (params[i][k] - params[j][k]);
            xs.push_back(std::sqrt(q));
            ys.push_back(d(i, j));
        }
    Proportionality p;
    p.pairs = static_cast<int>(xs.size());
    if (p.pairs < 2) throw DataError("proportionality: fewer than two connected pairs");
    const double n = p.pairs;
    double mx = 0.0, my = 0.0;
    for (int k = 0; k < p.pairs; ++k) {
        mx += xs[k] / n;
        my += ys[k] / n;
    }
    double sxx = 0.0, syy = 0.0, sxy = 0.0, xx = 0.0, xy = 0.0;
    for (int k = 0; k < p.pairs; ++k) {
        sxx += (xs[k] - mx) * (xs[k] - mx);
        syy += (ys[k] - my) * (ys[k] - my);
        sxy += (xs[k] - mx) * (ys[k] - my);
        xx += xs[k] * xs[k];
        xy += xs[k] * ys[k];
    }
    p.pearson = sxx > 0.0 && syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
    if (!(xx > 0.0)) throw DataError("proportionality: all parameter distances are zero");
    p.slope = xy / xx;
    for (int k = 0; k < p.pairs; ++k) {
        const double model = p.slope * xs[k];
        if (model > 0.0) p.max_rel_deviation = std::max(p.max_rel_deviation, std::abs(ys[k] - model) / model);
    }
    return p;
}

/// Shortest-path distances over the k-nearest-neighbor graph of the ambient L2
/// metric (symmetrized); the ISOMAP baseline on raw pixels.
inline DistanceMatrix ambient_metric(const std::vector<Image>& samples, int k) {
    const int n = static_cast<int>(samples.size());
    if (n < 2) throw DataError("ambient_metric: need at least 2 samples");
    if (k < 1) throw ConfigError("ambient_metric: k must be >= 1");
    DistanceMatrix l2(n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) l2(i, j) = l2(j, i) = l2_distance(samples[i], samples[j]);
    std::vector<std::vector<char>> linked(n, std::vector<char>(n, 0));
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> order;
        for (int j = 0; j < n; ++j)
            if (j != i) order.push_back({l2(i, j), j});
        std::sort(order.begin(), order.end());
        for (int m = 0; m < std::min(k, n - 1); ++m) linked[i][order[m].second] = linked[order[m].second][i] = 1;
    }
    std::vector<std::vector<std::pair<int, double>>> adj(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (linked[i][j]) adj[i].push_back({j, l2(i, j)});
    return shortest_paths(adj);
}

/// Node minimizing the summed distance to all others, preferring nodes that
/// reach the most others. Ties go to the lowest index.
inline int medoid(const DistanceMatrix& d) {
    int best = 0;
    int best_reach = -1;
    double best_sum = infinity;
    for (int i = 0; i < d.n; ++i) {
        int reach = 0;
        double sum = 0.0;
        for (int j = 0; j < d.n; ++j)
            if (std::isfinite(d(i, j))) {
                ++reach;
                sum += d(i, j);
            }
        if (reach > best_reach || (reach == best_reach && sum < best_sum)) {
            best = i;
            best_reach = reach;
            best_sum = sum;
        }
    }
    return best;
}

struct KarcherOptions {
    int max_iters = 50;
    double step = 0.5;
    double tol = 0.05;
    std::optional<int> init;                // starting sample; medoid under d_M otherwise
    std::optional<DistanceMatrix> distances;  // reused for the medoid when given
};

struct KarcherResult {
    Image mean;
    int init_index = 0;
    int iterations = 0;  // updates applied
    bool converged = false;
    std::vector<double> trace;  // mean-flow norm over the estimate's object support, per check
    std::vector<int> excluded;  // samples dropped at least once as unreachable
    std::vector<std::string> warnings;
};

/// Flow-averaging Karcher mean. The running estimate is always a single warp
/// of the initial sample by the accumulated flow, so repeated resampling does
/// not blur it.
inline KarcherResult karcher_mean(const std::vector<Image>& images, const FlowConfig& cfg, const KarcherOptions& opts = {}) {
    if (images.empty()) throw DataError("karcher_mean: no images");
    for (const Image& im : images) detail::require_same_shape(images.front(), im, "karcher_mean");
    if (opts.max_iters < 0) throw ConfigError("karcher_mean: max_iters must be >= 0");
    if (!(opts.step > 0.0 && opts.step <= 1.0)) throw ConfigError("karcher_mean: step must lie in (0, 1]");
    if (!(opts.tol > 0.0)) throw ConfigError("karcher_mean: tol must be > 0");
    cfg.validate();
    const int n = static_cast<int>(images.size());
    KarcherResult out;
    if (opts.init) {
        if (*opts.init < 0 || *opts.init >= n) throw ConfigError("karcher_mean: init index out of range");
        out.init_index = *opts.init;
    } else if (n > 1) {
        out.init_index = medoid(opts.distances ? *opts.distances : flow_metric(build_graph(images, cfg)));
    }
    const Image& start = images[out.init_index];
    const int w = start.width(), h = start.height();
    FlowField total = FlowField::zeros(w, h);
    Image estimate = start;
    std::vector<char> ever_excluded(n, 0);
    for (int iter = 0;; ++iter) {
        std::vector<std::optional<FlowField>> flows(n);
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t j) {
            // estimate(x) = images[j](x + psi_j(x)): every psi_j lives on the estimate's grid.
            auto r = flow_between(images[j], estimate, cfg);
            if (r) flows[j] = std::move(r->flow);
        });
        FlowField mean = FlowField::zeros(w, h);
        int used = 0;
        for (int j = 0; j < n; ++j) {
            if (!flows[j]) {
                if (!ever_excluded[j]) {
                    ever_excluded[j] = 1;
                    out.warnings.push_back("sample " + std::to_string(j) + " unreachable from the estimate; excluded");
                }
                continue;
            }
            for (std::size_t k = 0; k < mean.size(); ++k) {
                mean.vx[k] += flows[j]->vx[k];
                mean.vy[k] += flows[j]->vy[k];
            }
            ++used;
        }
        if (used == 0) throw DataError("karcher_mean: no sample is reachable from the current estimate");
        mean = scale_flow(mean, 1.0 / used);
        const double norm = flow_norm(mean, object_support(estimate));
        out.trace.push_back(norm);
        if (norm <= opts.tol) {
            out.converged = true;
            break;
        }
        if (iter >= opts.max_iters) break;
        // Moving content by +step * mean is a warp by -step * mean.
        total = compose_flows(total, scale_flow(mean, -opts.step));
        estimate = warp(start, total, Border::clamp);
        out.iterations = iter + 1;
    }
    for (int j = 0; j < n; ++j)
        if (ever_excluded[j]) out.excluded.push_back(j);
    out.mean = std::move(estimate);
    return out;
}

enum class ArticulationKind { translation, affine };

/// Templates with known parameters. Translation theta = (x, y) of the object;
/// affine theta = (A11, A12, A21, A22, t1, t2) in centered pixel coordinates.
struct TemplateSet {
    std::vector<Image> images;
    std::vector<std::vector<double>> params;
    ArticulationKind kind = ArticulationKind::translation;

    void validate() const {
        if (images.empty()) throw DataError("templates: empty set");
        if (images.size() != params.size()) throw DataError("templates: image and parameter counts differ");
        const std::size_t dim = kind == ArticulationKind::translation ? 2 : 6;
        for (std::size_t k = 0; k < images.size(); ++k) {
            detail::require_same_shape(images.front(), images[k], "templates");
            if (params[k].size() != dim) throw DataError("templates: parameter vector has the wrong dimension");
        }
    }
};

struct ParameterEstimate {
    std::vector<double> theta;
    int template_index = -1;
    double distance = 0.0;  // d_O from the chosen template, over the query's object support
    double fb_error = 0.0;
    double mean_residual = 0.0;
    std::vector<double> template_distances;  // +inf where inconsistent
};

/// Least-squares fit phi(x) ~ B x + b over pixels at least `margin` from the
/// border, x in centered pixel coordinates. Returns (B11, B12, B21, B22, b1, b2).
inline std::array<double, 6> fit_affine_flow(const FlowField& flow, int margin) {
    Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rx = Eigen::Vector3d::Zero(), ry = Eigen::Vector3d::Zero();
    for (int y = margin; y < flow.height - margin; ++y)
        for (int x = margin; x < flow.width - margin; ++x) {
            const auto c = centered_coordinates(x, y, flow.width, flow.height);
            const Eigen::Vector3d f(c[0], c[1], 1.0);
            const std::size_t k = flow.index(x, y);
            normal += f * f.transpose();
            rx += f * flow.vx[k];
            ry += f * flow.vy[k];
        }
    Eigen::LDLT<Eigen::Matrix3d> ldlt(normal);
    if (ldlt.info() != Eigen::Success || normal.determinant() <= 0.0)
        throw NumericalError("fit_affine_flow: too few interior pixels");
    const Eigen::Vector3d px = ldlt.solve(rx), py = ldlt.solve(ry);
    return {px(0), px(1), py(0), py(1), px(2), py(2)};
}

/// Nearest consistent template plus the flow-to-parameter calibration. For
/// affine sets the fit is refined `refinements` times against the template
/// warped by the current estimate; smoothing shrinks a large deformation's
/// flow gradient, a small residual's much less.
inline ParameterEstimate estimate_parameter(const TemplateSet& templates, const Image& query, const FlowConfig& cfg,
                                            int refinements = 3) {
    if (refinements < 0) throw ConfigError("estimate_parameter: refinements must be >= 0");
    templates.validate();
    detail::require_same_shape(templates.images.front(), query, "estimate_parameter");
    const std::size_t n = templates.images.size();
    std::vector<FlowResult> results(n);
    const Mask query_support = object_support(query);
    parallel_for(n, [&](std::size_t k) { results[k] = flow_pair(templates.images[k], query, cfg); });
    ParameterEstimate est;
    est.template_distances.assign(n, infinity);
    for (std::size_t k = 0; k < n; ++k) {
        if (!results[k].consistent) continue;
        est.template_distances[k] = flow_norm(results[k].flow, query_support);
        if (est.template_index < 0 || est.template_distances[k] < est.template_distances[est.template_index])
            est.template_index = static_cast<int>(k);
    }
    if (est.template_index < 0) throw DataError("estimate_parameter: query is inconsistent with every template");
    const FlowResult& r = results[est.template_index];
    const auto& base = templates.params[est.template_index];
    est.distance = est.template_distances[est.template_index];
    est.fb_error = r.fb_error;
    double res = 0.0;
    for (double v : r.residual) res += v;
    est.mean_residual = res / static_cast<double>(r.residual.size());

    if (templates.kind == ArticulationKind::translation) {
        // query(x) = template(x + phi): the object sits at template position - phi.
        const Mask& support = query_support;
        double mx = 0.0, my = 0.0;
        for (std::size_t k = 0; k < r.flow.size(); ++k)
            if (support.data[k]) {
                mx += r.flow.vx[k];
                my += r.flow.vy[k];
            }
        const double count = static_cast<double>(support.count());
        est.theta = {base[0] - mx / count, base[1] - my / count};
    } else {
        const int margin = std::max(2, std::min(query.width(), query.height()) / 10);
        const auto f = fit_affine_flow(r.flow, margin);
        // query(x) = template(b x + bt), b = B + I.
        Eigen::Matrix2d b;
        b << f[0] + 1.0, f[1], f[2], f[3] + 1.0;
        Eigen::Vector2d bt(f[4], f[5]);
        const Image& tmpl = templates.images[est.template_index];
        const int w = query.width(), h = query.height();
        for (int pass = 0; pass < refinements; ++pass) {
            FlowField guess(w, h);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const auto c = centered_coordinates(x, y, w, h);
                    const Eigen::Vector2d p(c[0], c[1]);
                    const Eigen::Vector2d v = b * p + bt - p;
                    guess.vx[guess.index(x, y)] = v(0);
                    guess.vy[guess.index(x, y)] = v(1);
                }
            const FlowResult rr = flow_pair(warp(tmpl, guess, Border::clamp), query, cfg);
            if (!rr.consistent) break;
            // query(x) = warped(c x + ct) = template(b (c x + ct) + bt).
            const auto g = fit_affine_flow(rr.flow, margin);
            Eigen::Matrix2d cm;
            cm << g[0] + 1.0, g[1], g[2], g[3] + 1.0;
            bt = b * Eigen::Vector2d(g[4], g[5]) + bt;
            b = b * cm;
        }
        // (A + I) = (At + I) b, t = (At + I) bt + tt.
        Eigen::Matrix2d at;
        at << base[0] + 1.0, base[1], base[2], base[3] + 1.0;
        const Eigen::Matrix2d a = at * b - Eigen::Matrix2d::Identity();
        const Eigen::Vector2d t = at * bt + Eigen::Vector2d(base[4], base[5]);
        est.theta = {a(0, 0), a(0, 1), a(1, 0), a(1, 1), t(0), t(1)};
    }
    return est;
}

} // namespace ofmkit
