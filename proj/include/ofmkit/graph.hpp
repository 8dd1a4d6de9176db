#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "ofmkit/error.hpp"
#include "ofmkit/flow.hpp"
#include "ofmkit/image.hpp"
#include "ofmkit/parallel.hpp"

namespace ofmkit {

inline constexpr double infinity = std::numeric_limits<double>::infinity();

/// Outcome of one attempted pair, kept so the gate can be re-run at another
/// epsilon without re-estimating flows.
struct PairAttempt {
    int i = 0, j = 0;
    double norm_ij = 0.0, norm_ji = 0.0;  // flow_norm of the i->j and j->i flows
    double fb_ij = 0.0, fb_ji = 0.0;      // consistency error with each flow taken as forward
};

struct Edge {
    int i = 0, j = 0;  // i < j
    double weight = 0.0;
    double fb_error = 0.0;  // worse of the two directions
};

struct FlowGraph {
    std::vector<Image> nodes;
    std::vector<std::vector<double>> params;  // ground-truth theta per node, may be empty
    std::vector<Edge> edges;
    std::vector<FlowField> edge_flows;  // flow carrying edges[k].i to edges[k].j, when kept
    std::vector<PairAttempt> attempts;
    FlowConfig config;
    bool preselected = false;  // candidates were limited by ambient distance
    std::vector<std::string> warnings;

    std::size_t size() const noexcept { return nodes.size(); }

    std::vector<std::vector<std::pair<int, double>>> adjacency() const {
        std::vector<std::vector<std::pair<int, double>>> adj(nodes.size());
        for (const Edge& e : edges) {
            adj[e.i].push_back({e.j, e.weight});
            adj[e.j].push_back({e.i, e.weight});
        }
        for (auto& list : adj) std::sort(list.begin(), list.end());
        return adj;
    }

    std::optional<std::size_t> find_edge(int a, int b) const {
        const int lo = std::min(a, b), hi = std::max(a, b);
        for (std::size_t k = 0; k < edges.size(); ++k)
            if (edges[k].i == lo && edges[k].j == hi) return k;
        return std::nullopt;
    }

    void remove_edge(int a, int b) {
        if (auto k = find_edge(a, b)) {
            edges.erase(edges.begin() + static_cast<std::ptrdiff_t>(*k));
            if (!edge_flows.empty()) edge_flows.erase(edge_flows.begin() + static_cast<std::ptrdiff_t>(*k));
        }
    }

    void require_node(int i) const {
        if (i < 0 || static_cast<std::size_t>(i) >= nodes.size())
            throw DataError("graph: node index " + std::to_string(i) + " out of range");
    }
};

struct GraphOptions {
    bool keep_flows = false;
    // When set, only pairs among each node's k nearest ambient-L2 neighbors are tried.
    std::optional<int> ambient_candidates;
    // Weight hops by RMS flow over the target's object support instead of the
    // full frame. Flow on a flat background is unobservable and shrinks the norm.
    bool object_weights = true;
};

namespace detail {

inline std::vector<std::pair<int, int>> candidate_pairs(const std::vector<Image>& samples, const GraphOptions& opts) {
    const int n = static_cast<int>(samples.size());
    std::vector<std::pair<int, int>> pairs;
    if (!opts.ambient_candidates) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) pairs.push_back({i, j});
        return pairs;
    }
    const int k = *opts.ambient_candidates;
    if (k < 1) throw ConfigError("graph: ambient candidate count must be >= 1");
    std::vector<std::vector<char>> chosen(n, std::vector<char>(n, 0));
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> d;
        for (int j = 0; j < n; ++j)
            if (j != i) d.push_back({l2_distance(samples[i], samples[j]), j});
        std::sort(d.begin(), d.end());
        for (int m = 0; m < std::min<int>(k, static_cast<int>(d.size())); ++m) {
            const int j = d[m].second;
            chosen[std::min(i, j)][std::max(i, j)] = 1;
        }
    }
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (chosen[i][j]) pairs.push_back({i, j});
    return pairs;
}

} // namespace detail

/// Inserts an edge for every attempted pair that passes the consistency gate in
/// both directions at `epsilon`. Weight is the mean of the two directed norms.
inline void gate_edges(FlowGraph& g, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("graph: epsilon must be > 0");
    g.edges.clear();
    g.edge_flows.clear();
    for (const PairAttempt& a : g.attempts) {
        if (a.fb_ij <= epsilon && a.fb_ji <= epsilon)
            g.edges.push_back({a.i, a.j, 0.5 * (a.norm_ij + a.norm_ji), std::max(a.fb_ij, a.fb_ji)});
    }
    g.config.consistency_threshold = epsilon;
    std::erase_if(g.warnings, [](const std::string& w) { return w.rfind("no edges", 0) == 0; });
    if (g.edges.empty() && g.size() > 1) g.warnings.push_back("no edges: every attempted pair failed the consistency gate");
}

/// Samples the IAM into a flow graph. Flows run in parallel over pairs; the
/// result does not depend on thread count.
inline FlowGraph build_graph(const std::vector<Image>& samples, const FlowConfig& cfg, const GraphOptions& opts = {}) {
    if (samples.size() < 2) throw DataError("build_graph: need at least 2 samples");
    for (const Image& s : samples) detail::require_same_shape(samples.front(), s, "build_graph");
    cfg.validate();
    FlowGraph g;
    g.nodes = samples;
    g.config = cfg;
    g.preselected = opts.ambient_candidates.has_value();
    const auto pairs = detail::candidate_pairs(samples, opts);
    g.attempts.resize(pairs.size());
    std::vector<FlowField> flows(opts.keep_flows ? pairs.size() : 0);
    parallel_for(pairs.size(), [&](std::size_t k) {
        const auto [i, j] = pairs[k];
        auto fij = estimate_flow(samples[i], samples[j], cfg);
        auto fji = estimate_flow(samples[j], samples[i], cfg);
        PairAttempt& a = g.attempts[k];
        a.i = i;
        a.j = j;
        if (opts.object_weights) {
            a.norm_ij = flow_norm(fij, object_support(samples[j]));
            a.norm_ji = flow_norm(fji, object_support(samples[i]));
        } else {
            a.norm_ij = flow_norm(fij);
            a.norm_ji = flow_norm(fji);
        }
        a.fb_ij = check_consistency(fij, fji, cfg.consistency_threshold).fb_error;
        a.fb_ji = check_consistency(fji, fij, cfg.consistency_threshold).fb_error;
        if (opts.keep_flows) flows[k] = std::move(fij);
    });
    gate_edges(g, cfg.consistency_threshold);
    if (opts.keep_flows) {
        std::size_t e = 0;
        for (std::size_t k = 0; k < pairs.size() && e < g.edges.size(); ++k)
            if (g.attempts[k].i == g.edges[e].i && g.attempts[k].j == g.edges[e].j) {
                g.edge_flows.push_back(std::move(flows[k]));
                ++e;
            }
    }
    return g;
}

/// Symmetric n x n matrix of flow-metric distances; +inf marks disconnected pairs.
struct DistanceMatrix {
    int n = 0;
    std::vector<double> values;

    DistanceMatrix() = default;
    explicit DistanceMatrix(int size, double fill = 0.0)
        : n(size), values(static_cast<std::size_t>(size) * static_cast<std::size_t>(size), fill) {}

    double& operator()(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }
    double operator()(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }

    bool all_finite() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }
};

/// Single-source shortest paths over nonnegative weights.
inline std::vector<double> dijkstra(const std::vector<std::vector<std::pair<int, double>>>& adj, int source) {
    std::vector<double> dist(adj.size(), infinity);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[source] = 0.0;
    queue.push({0.0, source});
    while (!queue.empty()) {
        const auto [d, u] = queue.top();
        queue.pop();
        if (d > dist[u]) continue;
        for (const auto& [v, w] : adj[u]) {
            const double nd = d + w;
            if (nd < dist[v]) {
                dist[v] = nd;
                queue.push({nd, v});
            }
        }
    }
    return dist;
}

/// Shortest-path closure of a weighted adjacency list: Dijkstra from every
/// node, then min-symmetrized and closed under the triangle inequality so the
/// metric axioms hold exactly in floating point.
inline DistanceMatrix shortest_paths(const std::vector<std::vector<std::pair<int, double>>>& adj) {
    const int n = static_cast<int>(adj.size());
    DistanceMatrix d(n);
    std::vector<std::vector<double>> rows(n);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t s) { rows[s] = dijkstra(adj, static_cast<int>(s)); });
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) d(i, j) = std::min(rows[i][j], rows[j][i]);
    // Rounding in path sums can leave violations in the last bit.
    for (int pass = 0; pass < 4; ++pass) {
        bool changed = false;
        for (int k = 0; k < n; ++k)
            for (int i = 0; i < n; ++i) {
                const double dik = d(i, k);
                if (!std::isfinite(dik)) continue;
                for (int j = 0; j < n; ++j) {
                    const double via = dik + d(k, j);
                    if (via < d(i, j)) {
                        d(i, j) = via;
                        changed = true;
                    }
                }
            }
        if (!changed) break;
    }
    for (int i = 0; i < n; ++i) d(i, i) = 0.0;
    return d;
}

/// d_M between every pair of nodes: shortest path over consistent hops.
inline DistanceMatrix flow_metric(const FlowGraph& g) { return shortest_paths(g.adjacency()); }

/// A shortest path from i to j; among ties, the lexicographically smallest
/// node sequence.
inline std::vector<int> geodesic_nodes(const FlowGraph& g, int i, int j) {
    g.require_node(i);
    g.require_node(j);
    const auto adj = g.adjacency();
    const auto to_target = dijkstra(adj, j);
    if (!std::isfinite(to_target[i]))
        throw DataError("geodesic_nodes: nodes " + std::to_string(i) + " and " + std::to_string(j) + " are disconnected");
    std::vector<int> path{i};
    std::vector<char> visited(adj.size(), 0);
    visited[i] = 1;
    int u = i;
    while (u != j) {
        int next = -1;
        for (const auto& [v, w] : adj[u]) {  // sorted by index
            if (visited[v]) continue;
            const double through = w + to_target[v];
            if (std::abs(through - to_target[u]) <= 1e-12 * std::max(1.0, to_target[u])) {
                next = v;
                break;
            }
        }
        if (next < 0) throw NumericalError("geodesic_nodes: path reconstruction failed");
        visited[next] = 1;
        path.push_back(next);
        u = next;
    }
    return path;
}

/// r_m: the largest direct-neighbor distance; 0 for an isolated node.
inline double flow_radius(const FlowGraph& g, int i) {
    g.require_node(i);
    double r = 0.0;
    for (const Edge& e : g.edges)
        if (e.i == i || e.j == i) r = std::max(r, e.weight);
    return r;
}

/// K_m = 1 / r_m, infinite for isolated nodes.
inline double flow_curvature(const FlowGraph& g, int i) {
    const double r = flow_radius(g, i);
    return r > 0.0 ? 1.0 / r : infinity;
}

} // namespace ofmkit
