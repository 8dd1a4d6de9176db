#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ofmkit/articulation.hpp"
#include "ofmkit/curve.hpp"
#include "ofmkit/error.hpp"
#include "ofmkit/flow.hpp"
#include "ofmkit/graph.hpp"
#include "ofmkit/image.hpp"
#include "ofmkit/io.hpp"
#include "ofmkit/manifold.hpp"
#include "ofmkit/scene.hpp"

namespace ofmkit::cli {

inline constexpr const char* tool_name = "ofmkit";
inline constexpr const char* tool_version = "0.1.0";

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

enum class OptionKind { value, flag, path, paths };

struct OptionDef {
    std::string name;
    std::string fallback;
    std::string help;
    OptionKind kind = OptionKind::value;
};

/// Resolved settings and bookkeeping for one invocation.
class Context {
public:
    std::string command;
    std::map<std::string, std::string> values;
    fs::path out;
    json report = json::object();
    json extra = json::object();  // merged into manifest.json (dataset files, params, ...)
    std::set<std::string> outputs;
    std::set<std::string> inputs;

    const std::string& str(const std::string& key) const {
        const auto it = values.find(key);
        if (it == values.end()) throw ConfigError("option --" + key + " does not apply to '" + command + "'");
        return it->second;
    }

    double real(const std::string& key) const {
        try {
            return io::parse_double(io::trim(str(key)));
        } catch (const DataError&) {
            throw ConfigError("--" + key + ": expected a number, got '" + str(key) + "'");
        }
    }

    int integer(const std::string& key) const {
        const std::string& s = str(key);
        try {
            std::size_t pos = 0;
            const long v = std::stol(s, &pos);
            if (pos != s.size() || v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
                throw std::invalid_argument(s);
            return static_cast<int>(v);
        } catch (const std::exception&) {
            throw ConfigError("--" + key + ": expected an integer, got '" + s + "'");
        }
    }

    bool boolean(const std::string& key) const {
        const std::string& s = str(key);
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off") return false;
        throw ConfigError("--" + key + ": expected true or false, got '" + s + "'");
    }

    std::vector<std::string> list(const std::string& key) const {
        std::vector<std::string> out;
        for (const auto& tok : io::split(str(key), ','))
            if (!io::trim(tok).empty()) out.push_back(io::trim(tok));
        return out;
    }

    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        for (const auto& tok : list(key)) {
            try {
                out.push_back(io::parse_double(tok));
            } catch (const DataError&) {
                throw ConfigError("--" + key + ": expected numbers, got '" + tok + "'");
            }
        }
        return out;
    }

    std::string choice(const std::string& key, std::initializer_list<const char*> allowed) const {
        const std::string& s = str(key);
        std::string names;
        for (const char* a : allowed) {
            if (s == a) return s;
            names += (names.empty() ? "" : "|") + std::string(a);
        }
        throw ConfigError("--" + key + ": expected one of " + names + ", got '" + s + "'");
    }

    /// Absolute path of an output file; parent directories are created.
    fs::path output(const std::string& rel) {
        const fs::path p = out / rel;
        fs::create_directories(p.parent_path());
        outputs.insert(rel);
        return p;
    }

    void input(const fs::path& p) { inputs.insert(p.string()); }
};

struct Command {
    std::string name;
    std::string description;
    std::vector<OptionDef> options;
    std::function<void(Context&)> body;
};

namespace detail {

inline std::vector<OptionDef> flow_options() {
    const FlowConfig d;
    return {
        {"alpha", io::format_double(d.alpha), "Horn-Schunck smoothness weight"},
        {"iterations", std::to_string(d.iterations), "solver iterations per pyramid level"},
        {"levels", std::to_string(d.levels), "pyramid levels"},
        {"downscale", io::format_double(d.downscale), "pyramid scale factor"},
        {"epsilon", io::format_double(d.consistency_threshold), "forward-backward consistency threshold, pixels"},
        {"warps", std::to_string(d.warps), "re-warps per level"},
        {"presmooth", io::format_double(d.presmooth_sigma), "Gaussian presmoothing sigma"},
        {"level-growth", io::format_double(d.level_growth), "iteration growth factor toward coarse levels"},
    };
}

inline FlowConfig flow_config(const Context& c) {
    FlowConfig cfg;
    cfg.alpha = c.real("alpha");
    cfg.iterations = c.integer("iterations");
    cfg.levels = c.integer("levels");
    cfg.downscale = c.real("downscale");
    cfg.consistency_threshold = c.real("epsilon");
    cfg.warps = c.integer("warps");
    cfg.presmooth_sigma = c.real("presmooth");
    cfg.level_growth = c.real("level-growth");
    cfg.validate();
    return cfg;
}

inline std::string numbered(int i, const char* ext, const char* prefix = "") {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%03d%s", prefix, i, ext);
    return buf;
}

inline json to_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(to_json(x));
    return a;
}

inline json to_json(const IsometryReport& r) {
    return {{"pairs", r.pairs},
            {"magnitude", r.magnitude},
            {"max_abs_deviation", r.max_abs_deviation},
            {"max_rel_deviation", r.max_rel_deviation},
            {"mean_rel_deviation", r.mean_rel_deviation}};
}

inline json to_json(const Proportionality& p) {
    return {{"pairs", p.pairs}, {"pearson", p.pearson}, {"slope", p.slope}, {"max_rel_deviation", p.max_rel_deviation}};
}

inline json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw DataError("cannot open " + p.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw DataError(p.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& p, const json& j) {
    std::ofstream os(p);
    os << j.dump(2) << '\n';
    if (!os) throw DataError("failed writing " + p.string());
}

inline void write_csv(const fs::path& p, const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
    std::ofstream os(p);
    if (!os) throw DataError("cannot open " + p.string() + " for writing");
    for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "," : "") << header[c];
    os << '\n';
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "," : "") << io::format_double(r[c]);
        os << '\n';
    }
    if (!os) throw DataError("failed writing " + p.string());
}

inline Eigen::MatrixXd to_matrix(const DistanceMatrix& d) {
    Eigen::MatrixXd m(d.n, d.n);
    for (int i = 0; i < d.n; ++i)
        for (int j = 0; j < d.n; ++j) m(i, j) = d(i, j);
    return m;
}

inline Eigen::MatrixXd params_matrix(const std::vector<std::vector<double>>& params) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(params.size()), static_cast<Eigen::Index>(params.front().size()));
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = params[i][j];
    return m;
}

/// Side-by-side strip with a one-pixel gap at mid gray.
inline Image montage(const std::vector<Image>& tiles) {
    int w = 0, h = 0;
    for (const Image& t : tiles) {
        w += t.width() + 1;
        h = std::max(h, t.height());
    }
    Image m(std::max(1, w - 1), std::max(1, h), 0.5);
    int x0 = 0;
    for (const Image& t : tiles) {
        for (int y = 0; y < t.height(); ++y)
            for (int x = 0; x < t.width(); ++x) m(x0 + x, y) = t(x, y);
        x0 += t.width() + 1;
    }
    return m;
}

// --- datasets -------------------------------------------------------------------

struct Dataset {
    std::vector<fs::path> files;
    std::vector<Image> images;
    std::vector<std::vector<double>> params;  // empty when unknown
    std::vector<double> times;                // empty when unknown
    std::string articulation;                 // "translation", "affine" or empty
};

inline bool is_image_file(const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".pgm" || ext == ".pfm";
}

/// A directory (its manifest.json, else its sorted *.pgm / *.pfm) or an
/// explicit list of image files.
inline Dataset load_dataset(Context& c, const std::string& key) {
    const auto paths = c.list(key);
    if (paths.empty()) throw ConfigError("--" + key + " is required");
    Dataset d;
    if (paths.size() == 1 && fs::is_directory(paths.front())) {
        const fs::path dir = paths.front();
        const fs::path man = dir / "manifest.json";
        if (fs::exists(man)) {
            const json j = read_json(man);
            if (!j.contains("files")) throw DataError(man.string() + ": no 'files' list");
            for (const auto& f : j.at("files")) d.files.push_back(dir / f.get<std::string>());
            if (j.contains("params"))
                for (const auto& p : j.at("params")) d.params.push_back(p.get<std::vector<double>>());
            if (j.contains("times")) d.times = j.at("times").get<std::vector<double>>();
            if (j.contains("articulation")) d.articulation = j.at("articulation").get<std::string>();
            c.input(man);
        } else {
            for (const auto& e : fs::directory_iterator(dir))
                if (e.is_regular_file() && is_image_file(e.path())) d.files.push_back(e.path());
            std::sort(d.files.begin(), d.files.end());
        }
        if (d.files.empty()) throw DataError(dir.string() + ": no images found");
    } else {
        for (const auto& p : paths) d.files.emplace_back(p);
    }
    for (const fs::path& f : d.files) {
        if (!fs::exists(f)) throw DataError("missing input " + f.string());
        d.images.push_back(io::read_image(f));
        c.input(f);
    }
    if (!d.params.empty() && d.params.size() != d.files.size())
        throw DataError("dataset: parameter count does not match file count");
    if (!d.times.empty() && d.times.size() != d.files.size())
        throw DataError("dataset: time stamp count does not match file count");
    return d;
}

inline Image load_image(Context& c, const fs::path& p) {
    if (!fs::exists(p)) throw DataError("missing input " + p.string());
    c.input(p);
    return io::read_image(p);
}

inline DistanceMatrix load_distances(Context& c, const fs::path& p) {
    if (!fs::exists(p)) throw DataError("missing input " + p.string());
    c.input(p);
    const Eigen::MatrixXd m = io::read_matrix_csv(p);
    if (m.rows() != m.cols()) throw DataError(p.string() + ": distance matrix is not square");
    DistanceMatrix d(static_cast<int>(m.rows()));
    for (int i = 0; i < d.n; ++i)
        for (int j = 0; j < d.n; ++j) {
            d(i, j) = m(i, j);
            if (d(i, j) != m(j, i)) throw DataError(p.string() + ": distance matrix is not symmetric");
        }
    return d;
}

// --- curves ---------------------------------------------------------------------

inline json curve_json(const Curve& cv, const std::vector<fs::path>& frames, const std::vector<std::string>& flows) {
    json j;
    json f = json::array();
    for (const auto& p : frames) f.push_back(p.string());
    j["frames"] = f;
    j["times"] = cv.times;
    std::vector<double> hops;
    for (int i = 0; i + 1 < cv.samples(); ++i) hops.push_back(cv.arc[i + 1] - cv.arc[i]);
    j["hops"] = hops;
    j["arc"] = cv.arc;
    j["radius"] = cv.radius;
    j["domain"] = cv.domain;
    j["hop_flows"] = flows;
    return j;
}

/// Curve from a curve.json; frames and hop flows are loaded when listed.
inline CurvePtr load_curve(Context& c, const fs::path& p) {
    if (!fs::exists(p)) throw DataError("missing input " + p.string());
    c.input(p);
    const json j = read_json(p);
    auto cv = std::make_shared<Curve>();
    try {
        cv->times = j.at("times").get<std::vector<double>>();
        const auto hops = j.at("hops").get<std::vector<double>>();
        if (hops.size() + 1 != cv->times.size()) throw DataError(p.string() + ": need one hop per consecutive pair");
        cv->arc.assign(cv->times.size(), 0.0);
        for (std::size_t i = 0; i < hops.size(); ++i) cv->arc[i + 1] = cv->arc[i] + hops[i];
        cv->radius = j.at("radius").get<std::vector<double>>();
        cv->domain = j.at("domain").get<int>();
        if (j.contains("frames"))
            for (const auto& f : j.at("frames")) cv->frames.push_back(load_image(c, f.get<std::string>()));
        if (j.contains("hop_flows"))
            for (const auto& f : j.at("hop_flows")) {
                const fs::path fp = p.parent_path() / f.get<std::string>();
                if (!fs::exists(fp)) throw DataError("missing input " + fp.string());
                c.input(fp);
                cv->hop_flows.push_back(io::read_flo(fp));
            }
    } catch (const json::exception& e) {
        throw DataError(p.string() + ": " + e.what());
    }
    cv->validate();
    return cv;
}

/// --curve FILE, else --uniform "hops,hop,reach".
inline CurvePtr curve_argument(Context& c) {
    if (!c.str("curve").empty()) return load_curve(c, c.str("curve"));
    const auto u = c.reals("uniform");
    if (u.size() != 3) throw ConfigError("need --curve FILE or --uniform hops,hop,reach");
    return uniform_curve(static_cast<int>(u[0]), u[1], static_cast<int>(u[2]));
}

/// Motion values on the domain: --motion CSV (t,h) or constant --h.
inline std::vector<double> motion_argument(Context& c, const Curve& cv, const std::string& file_key, const std::string& value_key) {
    if (!c.str(file_key).empty()) {
        const fs::path p = c.str(file_key);
        if (!fs::exists(p)) throw DataError("missing input " + p.string());
        c.input(p);
        const Eigen::MatrixXd m = io::read_matrix_csv(p);
        if (m.cols() != 2 || m.rows() != cv.domain)
            throw DataError(p.string() + ": expected " + std::to_string(cv.domain) + " rows of t,h");
        std::vector<double> h(cv.domain);
        for (int i = 0; i < cv.domain; ++i) {
            if (std::abs(m(i, 0) - cv.times[i]) > 1e-9 * std::max(1.0, std::abs(cv.times[i])))
                throw DataError(p.string() + ": time stamp on row " + std::to_string(i) + " does not match the curve");
            h[i] = m(i, 1);
        }
        return h;
    }
    if (c.str(value_key).empty()) throw ConfigError("need --" + file_key + " FILE or --" + value_key + " VALUE");
    return std::vector<double>(cv.domain, c.real(value_key));
}

inline void write_motion(Context& c, const std::string& rel, const MotionFunction& m) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < m.times.size(); ++i) rows.push_back({m.times[i], m.values[i]});
    write_csv(c.output(rel), {"t", "h"}, rows);
}

// --- gen ------------------------------------------------------------------------

/// Parameter offsets for a layout: gridNxM / gridN / lineN centered on zero, or
/// explicit absolute points "x:y,x:y".
struct Layout {
    std::vector<std::array<double, 2>> points;
    bool absolute = false;
};

inline Layout parse_layout(const std::string& spec, double spacing) {
    Layout l;
    auto grid = [&](int nx, int ny) {
        if (nx < 1 || ny < 1) throw ConfigError("--centers: grid sides must be >= 1");
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                l.points.push_back({(i - (nx - 1) / 2.0) * spacing, (j - (ny - 1) / 2.0) * spacing});
    };
    try {
        if (spec.rfind("grid", 0) == 0) {
            const std::string rest = spec.substr(4);
            const auto x = rest.find('x');
            if (x == std::string::npos) {
                const int n = std::stoi(rest);
                grid(n, n);
            } else {
                grid(std::stoi(rest.substr(0, x)), std::stoi(rest.substr(x + 1)));
            }
            return l;
        }
        if (spec.rfind("line", 0) == 0) {
            grid(std::stoi(spec.substr(4)), 1);
            return l;
        }
    } catch (const std::logic_error&) {
        throw ConfigError("--centers: cannot parse '" + spec + "'");
    }
    l.absolute = true;
    for (const auto& tok : io::split(spec, ',')) {
        const auto parts = io::split(io::trim(tok), ':');
        if (parts.size() != 2) throw ConfigError("--centers: expected gridNxM, lineN or x:y,x:y; got '" + spec + "'");
        try {
            l.points.push_back({io::parse_double(parts[0]), io::parse_double(parts[1])});
        } catch (const DataError&) {
            throw ConfigError("--centers: bad point '" + tok + "'");
        }
    }
    return l;
}

inline void write_frame(Context& c, const std::string& stem, const Image& img, const std::string& format, int bits) {
    if (format == "pfm") {
        io::write_pfm(c.output(stem + ".pfm"), img);
    } else {
        io::write_pgm(c.output(stem + ".pgm"), img, bits);
    }
}

inline void cmd_gen(Context& c) {
    const std::string kind = c.choice("kind", {"disk", "crop", "affine"});
    const std::string format = c.choice("format", {"pgm", "pfm"});
    const int bits = c.integer("bits");
    if (bits != 8 && bits != 16) throw ConfigError("--bits must be 8 or 16");
    const int size = c.integer("size");
    if (size < 2) throw ConfigError("--size must be >= 2");
    TextureSpec tex;
    tex.seed = static_cast<std::uint64_t>(c.integer("seed"));
    tex.width = tex.height = c.integer("texture-size");

    std::vector<Image> images;
    std::vector<std::vector<double>> params;
    if (kind == "affine") {
        const int count = c.integer("count");
        if (count < 1) throw ConfigError("--count must be >= 1");
        const double mag = c.real("magnitude"), shift = c.real("shift");
        std::mt19937_64 rng(tex.seed + 1);
        for (int k = 0; k < count; ++k) {
            AffineScene s;
            s.texture = tex;
            s.width = s.height = size;
            if (k > 0 || !c.boolean("include-identity")) {
                for (double& a : s.a) a = mag * normal01(rng);
                for (double& t : s.t) t = shift * normal01(rng);
            }
            images.push_back(generate(s));
            params.push_back({s.a[0], s.a[1], s.a[2], s.a[3], s.t[0], s.t[1]});
        }
    } else {
        const Layout layout = parse_layout(c.str("centers"), c.real("spacing"));
        for (const auto& pt : layout.points) {
            if (kind == "disk") {
                DiskScene s;
                s.width = s.height = size;
                const double mid = (size - 1) / 2.0;
                s.cx = layout.absolute ? pt[0] : mid + pt[0];
                s.cy = layout.absolute ? pt[1] : mid + pt[1];
                s.radius = c.real("r");
                s.antialias = c.boolean("antialias");
                s.foreground = c.real("foreground");
                s.background = c.real("background");
                images.push_back(generate(s));
                params.push_back({s.cx, s.cy});
            } else {
                PatchCropScene s;
                s.texture = tex;
                s.width = s.height = size;
                const double mid = (tex.width - size) / 2.0;
                s.offset_x = layout.absolute ? pt[0] : mid + pt[0];
                s.offset_y = layout.absolute ? pt[1] : mid + pt[1];
                images.push_back(generate(s));
                params.push_back({s.offset_x, s.offset_y});
            }
        }
    }
    json files = json::array();
    for (std::size_t k = 0; k < images.size(); ++k) {
        write_frame(c, numbered(static_cast<int>(k), ""), images[k], format, bits);
        files.push_back(numbered(static_cast<int>(k), format == "pfm" ? ".pfm" : ".pgm"));
    }
    write_csv(c.output("params.csv"),
              kind == "affine" ? std::vector<std::string>{"a11", "a12", "a21", "a22", "t1", "t2"}
                               : std::vector<std::string>{"x", "y"},
              params);
    c.extra["kind"] = kind;
    c.extra["articulation"] = kind == "affine" ? "affine" : "translation";
    c.extra["files"] = files;
    c.extra["params"] = params;
    c.report["count"] = images.size();
}

// --- flow / graph / metric ----------------------------------------------------------

inline void cmd_flow(Context& c) {
    const Dataset d = load_dataset(c, "input");
    if (d.images.size() != 2) throw DataError("flow: need exactly two images, got " + std::to_string(d.images.size()));
    const FlowConfig cfg = flow_config(c);
    const FlowResult r = flow_pair(d.images[0], d.images[1], cfg);
    io::write_flo(c.output("forward.flo"), r.flow);
    io::write_flo(c.output("backward.flo"), r.backward);
    c.report["consistent"] = r.consistent;
    c.report["degenerate"] = r.degenerate;
    c.report["fb_error"] = r.fb_error;
    c.report["excluded_fraction"] = r.excluded_fraction;
    c.report["flow_norm"] = flow_norm(r.flow);
    c.report["flow_norm_object"] = flow_norm(r.flow, object_support(d.images[1]));
    double res = 0.0;
    for (double v : r.residual) res += v / static_cast<double>(r.residual.size());
    c.report["mean_residual"] = res;
}

inline FlowGraph graph_from(Context& c, const Dataset& d, bool keep_flows) {
    GraphOptions opts;
    opts.keep_flows = keep_flows;
    if (const int k = c.integer("ambient-candidates"); k > 0) opts.ambient_candidates = k;
    FlowGraph g = build_graph(d.images, flow_config(c), opts);
    g.params = d.params;
    return g;
}

inline void write_graph(Context& c, const Dataset& d, const FlowGraph& g) {
    json j;
    json nodes = json::array();
    for (const auto& f : d.files) nodes.push_back(f.string());
    j["nodes"] = nodes;
    if (!d.params.empty()) j["params"] = d.params;
    j["epsilon"] = g.config.consistency_threshold;
    j["preselected"] = g.preselected;
    json edges = json::array();
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
        const Edge& e = g.edges[k];
        json je = {{"i", e.i}, {"j", e.j}, {"weight", e.weight}, {"fb_error", e.fb_error}};
        if (!g.edge_flows.empty()) {
            const std::string rel = "edges/" + numbered(e.i, "") + "_" + numbered(e.j, ".flo");
            io::write_flo(c.output(rel), g.edge_flows[k]);
            je["flow"] = rel;
        }
        edges.push_back(je);
    }
    j["edges"] = edges;
    json attempts = json::array();
    for (const PairAttempt& a : g.attempts)
        attempts.push_back({{"i", a.i}, {"j", a.j}, {"norm_ij", a.norm_ij}, {"norm_ji", a.norm_ji}, {"fb_ij", a.fb_ij}, {"fb_ji", a.fb_ji}});
    j["attempts"] = attempts;
    j["warnings"] = g.warnings;
    write_json(c.output("graph.json"), j);

    std::vector<std::vector<double>> rows;
    for (int i = 0; i < static_cast<int>(g.size()); ++i) rows.push_back({double(i), flow_radius(g, i), flow_curvature(g, i)});
    write_csv(c.output("radius.csv"), {"node", "r", "K"}, rows);
    c.report["nodes"] = g.size();
    c.report["edges"] = g.edges.size();
    c.report["warnings"] = g.warnings;
}

inline void cmd_graph(Context& c) {
    const Dataset d = load_dataset(c, "input");
    const FlowGraph g = graph_from(c, d, c.boolean("write-flows"));
    write_graph(c, d, g);
}

inline void cmd_metric(Context& c) {
    const Dataset d = load_dataset(c, "input");
    const FlowGraph g = graph_from(c, d, c.boolean("write-flows"));
    write_graph(c, d, g);
    const DistanceMatrix dm = flow_metric(g);
    io::write_matrix_csv(c.output("distances.csv"), to_matrix(dm));
    c.report["connected"] = dm.all_finite();
    if (!d.params.empty()) c.report["proportionality"] = to_json(proportionality(dm, d.params));
}

// --- embed / interp / karcher / estimate ------------------------------------------

inline void cmd_embed(Context& c) {
    const int dims = c.integer("dims");
    const std::string metric = c.choice("metric", {"flow", "ambient"});
    DistanceMatrix dm;
    Dataset d;
    if (!c.str("distances").empty()) {
        dm = load_distances(c, c.str("distances"));
    } else {
        d = load_dataset(c, "input");
        dm = metric == "flow" ? flow_metric(graph_from(c, d, false)) : ambient_metric(d.images, c.integer("k"));
        io::write_matrix_csv(c.output("distances.csv"), to_matrix(dm));
    }
    const Embedding e = embed(dm, dims);
    io::write_matrix_csv(c.output("embedding.csv"), e.coords);
    Eigen::MatrixXd ev(static_cast<Eigen::Index>(e.eigenvalues.size()), 1);
    for (std::size_t k = 0; k < e.eigenvalues.size(); ++k) ev(static_cast<Eigen::Index>(k), 0) = e.eigenvalues[k];
    io::write_matrix_csv(c.output("eigenvalues.csv"), ev, {"eigenvalue"});
    c.report["metric"] = c.str("distances").empty() ? metric : "file";
    c.report["degenerate"] = e.degenerate;
    if (!d.params.empty() && static_cast<int>(d.params.front().size()) == dims) {
        const Eigen::MatrixXd truth = params_matrix(d.params);
        const double rms = procrustes_rms(e.coords, truth), diam = point_diameter(truth);
        c.report["procrustes"] = {{"residual", procrustes_residual(e.coords, truth)},
                                  {"rms", rms},
                                  {"diameter", diam},
                                  {"rms_over_diameter", rms / diam}};
    }
}

inline void cmd_interp(Context& c) {
    const Dataset d = load_dataset(c, "input");
    const int n = static_cast<int>(d.images.size());
    if (n < 2) throw DataError("interp: need at least two images");
    int from = c.integer("from"), to = c.integer("to");
    if (to < 0) to += n;
    if (from < 0 || from >= n || to < 0 || to >= n || from == to) throw ConfigError("interp: bad --from/--to");
    const std::string method = c.choice("method", {"flow", "blend"});
    const auto ts = c.reals("t");
    if (ts.empty()) throw ConfigError("interp: --t needs at least one value");
    for (double t : ts)
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("interp: every t must lie in [0, 1]");
    std::optional<FlowGraph> g;
    if (method == "flow" && n > 2) {
        g = graph_from(c, d, false);
        c.report["path"] = geodesic_nodes(*g, from, to);
    }
    const FlowConfig cfg = flow_config(c);
    json files = json::array();
    for (std::size_t k = 0; k < ts.size(); ++k) {
        Image frame = method == "blend" ? linear_blend(d.images[from], d.images[to], ts[k])
                      : g                ? interpolate_path(*g, from, to, ts[k])
                                         : interpolate(d.images[from], d.images[to], ts[k], cfg);
        const std::string stem = numbered(static_cast<int>(k), "", "frame_");
        io::write_pfm(c.output(stem + ".pfm"), frame);
        io::write_pgm(c.output(stem + ".pgm"), frame, 16);
        files.push_back(stem + ".pfm");
    }
    c.extra["files"] = files;
    c.extra["times"] = ts;
    c.report["frames"] = ts.size();
}

inline void cmd_karcher(Context& c) {
    const Dataset d = load_dataset(c, "input");
    KarcherOptions opts;
    opts.max_iters = c.integer("max-iters");
    opts.step = c.real("step");
    opts.tol = c.real("tol");
    if (const int init = c.integer("init"); init >= 0) opts.init = init;
    const KarcherResult r = karcher_mean(d.images, flow_config(c), opts);
    io::write_pfm(c.output("mean.pfm"), r.mean);
    io::write_pgm(c.output("mean.pgm"), r.mean, 16);
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < r.trace.size(); ++k) rows.push_back({double(k), r.trace[k]});
    write_csv(c.output("trace.csv"), {"iteration", "mean_flow_norm"}, rows);
    c.report["iterations"] = r.iterations;
    c.report["converged"] = r.converged;
    c.report["init_index"] = r.init_index;
    c.report["excluded"] = r.excluded;
    c.report["warnings"] = r.warnings;
    const auto [cx, cy] = intensity_centroid(r.mean, c.real("background"));
    c.report["centroid"] = {cx, cy};
    if (!d.params.empty() && d.articulation == "translation") {
        std::vector<double> mean(d.params.front().size(), 0.0);
        for (const auto& p : d.params)
            for (std::size_t k = 0; k < p.size(); ++k) mean[k] += p[k] / static_cast<double>(d.params.size());
        c.report["param_mean"] = mean;
    }
}

inline void cmd_estimate(Context& c) {
    const Dataset t = load_dataset(c, "templates");
    if (t.params.empty()) throw DataError("estimate: templates carry no parameters; generate them with a manifest");
    std::string kind = c.str("articulation");
    if (kind.empty()) kind = t.articulation.empty() ? "translation" : t.articulation;
    if (kind != "translation" && kind != "affine") throw ConfigError("--articulation must be translation or affine");
    TemplateSet ts;
    ts.images = t.images;
    ts.params = t.params;
    ts.kind = kind == "affine" ? ArticulationKind::affine : ArticulationKind::translation;
    ts.validate();
    const Dataset q = load_dataset(c, "query");
    const FlowConfig cfg = flow_config(c);
    std::vector<std::vector<double>> rows;
    json list = json::array();
    for (std::size_t k = 0; k < q.images.size(); ++k) {
        const ParameterEstimate e = estimate_parameter(ts, q.images[k], cfg);
        std::vector<double> row{double(k)};
        row.insert(row.end(), e.theta.begin(), e.theta.end());
        row.push_back(e.template_index);
        row.push_back(e.distance);
        rows.push_back(row);
        list.push_back({{"query", q.files[k].string()},
                        {"theta", e.theta},
                        {"template_index", e.template_index},
                        {"distance", e.distance},
                        {"fb_error", e.fb_error},
                        {"mean_residual", e.mean_residual},
                        {"template_distances", to_json(e.template_distances)}});
    }
    std::vector<std::string> header{"query"};
    if (ts.kind == ArticulationKind::affine)
        header.insert(header.end(), {"a11", "a12", "a21", "a22", "t1", "t2"});
    else
        header.insert(header.end(), {"x", "y"});
    header.insert(header.end(), {"template_index", "distance"});
    write_csv(c.output("estimates.csv"), header, rows);
    c.report["articulation"] = kind;
    c.report["estimates"] = list;
}

// --- curve / fields / resample -------------------------------------------------------

inline void cmd_curve(Context& c) {
    const Dataset d = load_dataset(c, "input");
    std::vector<double> times = c.reals("times");
    if (times.empty()) times = d.times;
    if (times.empty())
        for (std::size_t k = 0; k < d.images.size(); ++k) times.push_back(static_cast<double>(k));
    CurveFromFramesOptions opts;
    if (const int r = c.integer("max-reach"); r > 0) opts.max_reach = r;
    if (const int dom = c.integer("domain"); dom > 0) opts.domain = dom;
    const CurvePtr cv = curve_from_frames(d.images, times, flow_config(c), opts);
    std::vector<std::string> flows;
    for (int j = 0; j + 1 < cv->samples(); ++j) {
        const std::string rel = "hops/" + numbered(j, ".flo");
        io::write_flo(c.output(rel), cv->hop_flows[j]);
        flows.push_back(rel);
    }
    write_json(c.output("curve.json"), curve_json(*cv, d.files, flows));
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < cv->samples(); ++i)
        rows.push_back({cv->times[i], cv->arc[i], cv->radius[i], cv->radius[i] > 0 ? 1.0 / cv->radius[i] : infinity});
    write_csv(c.output("radius.csv"), {"t", "s", "r", "K"}, rows);
    c.report["length"] = cv->length();
    c.report["domain"] = cv->domain;
    c.report["radius_spread"] = to_json(cv->radius_spread());
    c.report["min_radius"] = cv->min_radius();
}

inline void cmd_fields(Context& c) {
    const CurvePtr cv = curve_argument(c);
    const std::string op = c.choice("op", {"motion", "median", "conjugate", "add", "translate", "quantize"});
    const double spread = c.real("spread-tol");
    CurveFlowField result;
    if (op == "translate") {
        result = parallel_translate(cv, c.integer("at"), c.real("delta"));
    } else {
        const CurveFlowField v = field_from_motion(cv, motion_argument(c, *cv, "motion", "h"));
        if (op == "motion") {
            result = v;
            const auto back = motion_of_field(v);
            const auto h = motion_argument(c, *cv, "motion", "h");
            double err = 0.0;
            for (std::size_t i = 0; i < h.size(); ++i) err = std::max(err, std::abs(back.values[i] - h[i]));
            c.report["round_trip_error"] = err;
        } else if (op == "median") {
            const ParallelApprox a = best_parallel_approx(v, spread);
            result = a.field;
            c.report["median"] = a.median;
            c.report["level"] = a.level;
            c.report["bound"] = a.bound;
            c.report["realized_error"] = realized_error(v, a.field);
        } else if (op == "conjugate") {
            result = conjugate(v);
        } else if (op == "add") {
            result = monoid_add(v, field_from_motion(cv, motion_argument(c, *cv, "motion2", "h2")));
        } else {
            const QuantizedField q = multiscale_quantize(v, c.integer("n"), c.integer("k"), spread);
            result = q.field;
            c.report["level_numerator"] = q.level.j;
            c.report["level_denominator"] = q.level.denom;
            c.report["error"] = q.error;
            c.report["error_bound"] = cv->mean_radius() / (2.0 * static_cast<double>(q.level.denom));
        }
    }
    write_motion(c, "motion.csv", motion_of_field(result));
    c.report["op"] = op;
    c.report["parallel"] = is_parallel(result, c.real("tol"));
}

inline void cmd_resample(Context& c) {
    const CurvePtr cv = curve_argument(c);
    const ResampleResult r = resample_uniform(*cv, c.real("h"));
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < r.times.size(); ++k) rows.push_back({r.times[k], k ? r.steps[k - 1] : 0.0, r.arcs[k]});
    write_csv(c.output("times.csv"), {"t", "step", "s"}, rows);
    json files = json::array();
    for (std::size_t k = 0; k < r.frames.size(); ++k) {
        const std::string stem = numbered(static_cast<int>(k), "", "frame_");
        io::write_pfm(c.output(stem + ".pfm"), r.frames[k]);
        io::write_pgm(c.output(stem + ".pgm"), r.frames[k], 16);
        files.push_back(stem + ".pfm");
    }
    if (!r.frames.empty()) {
        c.extra["files"] = files;
        c.extra["times"] = r.times;
    }
    c.report["count"] = r.times.size();
    c.report["dropped_partial"] = r.dropped_partial;
    c.report["leftover"] = r.leftover;
    if (cv->samples() >= 3) {
        const AccelerationFit fit = fit_constant_acceleration(*cv);
        c.report["fit"] = {{"kv0", fit.kv0}, {"ka", fit.ka}};
        if (!r.steps.empty() && (fit.ka != 0.0 || fit.kv0 > 0.0))
            c.report["closed_form_first_step"] = closed_form_step(fit.kv0, fit.ka, 1.0, c.real("h"));
    }
}

// --- verify-appendix ----------------------------------------------------------------

inline void write_sigma(Context& c, const std::string& rel, const MomentMatrix& m) {
    io::write_matrix_csv(c.output(rel + "_quadrature.csv"), m.quadrature);
    if (m.closed_form.size() > 0) io::write_matrix_csv(c.output(rel + "_closed_form.csv"), m.closed_form);
}

inline void cmd_verify(Context& c) {
    const std::string model = c.choice("model", {"affine", "pose", "all"});
    IsometryOptions opts;
    opts.seed = static_cast<std::uint64_t>(c.integer("seed"));
    opts.resolution = c.integer("resolution");
    if (opts.resolution < 2) throw ConfigError("--resolution must be >= 2");
    const int count = c.integer("count");
    if (model != "pose") {
        const MomentMatrix s = affine_sigma(opts.resolution);
        write_sigma(c, "sigma_affine", s);
        const IsometryReport r = verify_isometry(IsometryModel::affine, count, c.real("magnitude"), opts);
        c.report["affine"] = {{"sigma_max_deviation", s.max_deviation()}, {"isometry", to_json(r)}, {"max_deviation", r.max_rel_deviation}};
    }
    if (model != "affine") {
        write_sigma(c, "sigma_pose", pose_sigma(opts.pose));
        const IsometryReport wp = verify_isometry(IsometryModel::pose_wp, count, c.real("pose-magnitude"), opts);
        const ScalingReport loc = pose_locality(c.real("small"), c.real("large"), count, opts);
        c.report["pose"] = {{"wp_isometry", to_json(wp)},
                            {"locality", {{"small", to_json(loc.small)}, {"large", to_json(loc.large)}, {"exponent", loc.exponent}}}};
    }
}

// --- figures ------------------------------------------------------------------------

inline Image disk_at(int size, double cx, double cy, double r, bool aa = true) {
    DiskScene s;
    s.width = s.height = size;
    s.cx = cx;
    s.cy = cy;
    s.radius = r;
    s.antialias = aa;
    return generate(s);
}

inline void cmd_figures(Context& c) {
    const bool quick = c.boolean("quick");
    const FlowConfig cfg = flow_config(c);

    // Saturation of the ambient distance between translated disks.
    {
        const Image base = disk_at(256, 100.0, 127.5, 20.0, false);
        std::vector<std::vector<double>> rows;
        for (int sep = 0; sep <= 60; ++sep) rows.push_back({double(sep), l2_distance(base, disk_at(256, 100.0 + sep, 127.5, 20.0, false))});
        write_csv(c.output("saturation.csv"), {"separation", "l2"}, rows);
    }

    // Blend versus flow interpolation for a 20 px translation.
    {
        const int size = 128;
        const double x0 = 54.0, x1 = 74.0, y = 64.0, r = 20.0;
        const Image a = disk_at(size, x0, y, r), b = disk_at(size, x1, y, r);
        FlowConfig icfg = cfg;
        icfg.consistency_threshold = c.real("interp-epsilon");
        std::vector<Image> blends, flows;
        std::vector<std::vector<double>> rows;
        for (int k = 0; k <= 4; ++k) {
            const double t = k / 4.0;
            const Image truth = disk_at(size, x0 + t * (x1 - x0), y, r);
            blends.push_back(linear_blend(a, b, t));
            flows.push_back(interpolate(a, b, t, icfg));
            rows.push_back({t, l2_distance(blends.back(), truth), l2_distance(flows.back(), truth)});
        }
        io::write_pgm(c.output("blend_strip.pgm"), montage(blends), 8);
        io::write_pgm(c.output("flow_strip.pgm"), montage(flows), 8);
        write_csv(c.output("interp_errors.csv"), {"t", "blend_l2", "flow_l2"}, rows);
        c.report["interp_midpoint"] = {{"blend_l2", rows[2][1]}, {"flow_l2", rows[2][2]}};
    }

    // Flow-metric versus ambient embedding of a translation grid.
    {
        const int side = quick ? 3 : 5;
        const int size = quick ? 96 : 128;
        FlowConfig gcfg = cfg;
        gcfg.levels = std::min(cfg.levels, quick ? 3 : 4);
        TextureSpec tex;
        std::vector<Image> crops;
        std::vector<std::vector<double>> truth;
        for (int j = 0; j < side; ++j)
            for (int i = 0; i < side; ++i) {
                PatchCropScene s;
                s.texture = tex;
                s.width = s.height = size;
                s.offset_x = 200.0 + 10.0 * i;
                s.offset_y = 200.0 + 10.0 * j;
                crops.push_back(generate(s));
                truth.push_back({s.offset_x, s.offset_y});
            }
        io::write_pgm(c.output("grid_samples.pgm"), montage({crops.front(), crops[crops.size() / 2], crops.back()}), 8);
        const DistanceMatrix df = flow_metric(build_graph(crops, gcfg));
        const DistanceMatrix da = ambient_metric(crops, 4);
        io::write_matrix_csv(c.output("grid_distances.csv"), to_matrix(df));
        write_csv(c.output("grid_truth.csv"), {"x", "y"}, truth);
        const Eigen::MatrixXd t = params_matrix(truth);
        json rep;
        rep["proportionality"] = to_json(proportionality(df, truth));
        for (const auto& [name, dm] : {std::pair{std::string("flow"), df}, std::pair{std::string("ambient"), da}}) {
            if (!dm.all_finite()) {
                rep[name] = "disconnected";
                continue;
            }
            const Embedding e = embed(dm, 2);
            io::write_matrix_csv(c.output("grid_" + name + "_embedding.csv"), e.coords, {"u", "v"});
            rep[name] = {{"rms_over_diameter", procrustes_rms(e.coords, t) / point_diameter(t)}};
        }
        c.report["embedding"] = rep;
    }

    // Karcher mean of translated disks.
    {
        const int count = quick ? 6 : 20;
        std::mt19937_64 rng(static_cast<std::uint64_t>(c.integer("seed")));
        std::vector<Image> disks;
        double mx = 0.0, my = 0.0;
        for (int k = 0; k < count; ++k) {
            const double x = 63.5 + uniform(rng, -12.0, 12.0), y = 63.5 + uniform(rng, -12.0, 12.0);
            disks.push_back(disk_at(128, x, y, 16.0));
            mx += x / count;
            my += y / count;
        }
        const KarcherResult r = karcher_mean(disks, cfg);
        io::write_pgm(c.output("karcher_inputs.pgm"), montage(std::vector<Image>(disks.begin(), disks.begin() + std::min(count, 6))), 8);
        io::write_pgm(c.output("karcher_mean.pgm"), r.mean, 8);
        std::vector<std::vector<double>> rows;
        for (std::size_t k = 0; k < r.trace.size(); ++k) rows.push_back({double(k), r.trace[k]});
        write_csv(c.output("karcher_trace.csv"), {"iteration", "mean_flow_norm"}, rows);
        const auto [cx, cy] = intensity_centroid(r.mean);
        c.report["karcher"] = {{"iterations", r.iterations},
                               {"converged", r.converged},
                               {"centroid", {cx, cy}},
                               {"center_mean", {mx, my}},
                               {"centroid_error", std::hypot(cx - mx, cy - my)}};
    }
}

// --- registry ----------------------------------------------------------------------

inline std::vector<OptionDef> with_flow(std::vector<OptionDef> opts) {
    auto f = flow_options();
    opts.insert(opts.end(), f.begin(), f.end());
    return opts;
}

inline const std::vector<Command>& commands() {
    static const std::vector<Command> list = [] {
        const OptionDef input{"input", "", "image files, or a directory with manifest.json or *.pgm / *.pfm", OptionKind::paths};
        const OptionDef candidates{"ambient-candidates", "0", "try only each node's k nearest ambient neighbors (0: all pairs)"};
        std::vector<Command> c;
        c.push_back({"gen", "render a synthetic image family",
                     {{"kind", "disk", "disk | crop | affine"},
                      {"size", "256", "image side, pixels"},
                      {"r", "20", "disk radius"},
                      {"centers", "grid5x5", "gridNxM | lineN | x:y,x:y (absolute)"},
                      {"spacing", "10", "grid spacing, pixels"},
                      {"antialias", "false", "exact pixel coverage for disks", OptionKind::flag},
                      {"foreground", "1", "disk intensity"},
                      {"background", "0", "background intensity"},
                      {"seed", "7", "texture and parameter seed"},
                      {"texture-size", "512", "texture extent for crops"},
                      {"count", "10", "affine samples"},
                      {"magnitude", "0.05", "std of affine matrix entries"},
                      {"shift", "2", "std of affine translation, pixels"},
                      {"include-identity", "true", "first affine sample is the identity", OptionKind::flag},
                      {"format", "pgm", "pgm | pfm"},
                      {"bits", "16", "PGM bit depth, 8 or 16"}},
                     cmd_gen});
        c.push_back({"flow", "optical flow between two images", with_flow({input}), cmd_flow});
        c.push_back({"graph", "flow graph with consistency-gated edges",
                     with_flow({input, candidates, {"write-flows", "true", "write per-edge .flo files", OptionKind::flag}}), cmd_graph});
        c.push_back({"metric", "flow-metric distance matrix",
                     with_flow({input, candidates, {"write-flows", "false", "write per-edge .flo files", OptionKind::flag}}), cmd_metric});
        c.push_back({"embed", "classical MDS of the flow or ambient metric",
                     with_flow({input,
                                candidates,
                                {"distances", "", "precomputed distance CSV instead of --input", OptionKind::path},
                                {"metric", "flow", "flow | ambient"},
                                {"k", "4", "neighbors for the ambient graph"},
                                {"dims", "2", "embedding dimension"}}),
                     cmd_embed});
        c.push_back({"interp", "frames between two samples",
                     with_flow({input,
                                candidates,
                                {"from", "0", "start sample"},
                                {"to", "-1", "end sample (negative counts from the end)"},
                                {"t", "0,0.25,0.5,0.75,1", "interpolation parameters"},
                                {"method", "flow", "flow | blend"}}),
                     cmd_interp});
        c.push_back({"karcher", "flow-averaging Karcher mean",
                     with_flow({input,
                                {"max-iters", "50", "iteration cap"},
                                {"step", "0.5", "update step in (0, 1]"},
                                {"tol", "0.05", "stop when the mean flow norm falls below this"},
                                {"init", "-1", "starting sample (negative: medoid)"},
                                {"background", "0", "background level for the reported centroid"}}),
                     cmd_karcher});
        c.push_back({"estimate", "articulation parameters of query images",
                     with_flow({{"templates", "", "template directory with parameters", OptionKind::paths},
                                {"query", "", "query images or directory", OptionKind::paths},
                                {"articulation", "", "translation | affine (default: from the template manifest)"}}),
                     cmd_estimate});
        c.push_back({"curve", "curve of frames with hop lengths and restricted radii",
                     with_flow({input,
                                {"times", "", "time stamps (default: manifest times or 0..N-1)"},
                                {"max-reach", "0", "hops scanned per radius (0: unlimited)"},
                                {"domain", "0", "domain size (0: default)"}}),
                     cmd_curve});
        const OptionDef curve{"curve", "", "curve.json", OptionKind::path};
        const OptionDef uniform{"uniform", "", "synthetic curve hops,hop,reach"};
        c.push_back({"fields", "curve flow field operations",
                     {curve,
                      uniform,
                      {"op", "motion", "motion | median | conjugate | add | translate | quantize"},
                      {"motion", "", "motion function CSV (t,h)", OptionKind::path},
                      {"h", "", "constant motion value"},
                      {"motion2", "", "second motion CSV for add", OptionKind::path},
                      {"h2", "", "second constant motion for add"},
                      {"at", "0", "anchor sample for translate"},
                      {"delta", "0", "arc offset for translate"},
                      {"n", "2", "scale exponent for quantize"},
                      {"k", "2", "scale base for quantize"},
                      {"spread-tol", "0.05", "relative radius spread accepted as constant curvature"},
                      {"tol", "1e-9", "tolerance for the parallel check"}},
                     cmd_fields});
        c.push_back({"resample", "re-time a curve to constant arc-length steps",
                     {curve, uniform, {"h", "1", "arc length per output step"}}, cmd_resample});
        c.push_back({"verify-appendix", "moment matrices and isometry checks for affine and pose models",
                     {{"model", "all", "affine | pose | all"},
                      {"count", "100", "random pairs"},
                      {"magnitude", "1", "affine parameter magnitude"},
                      {"pose-magnitude", "0.05", "pose parameter magnitude for the WP check"},
                      {"small", "0.01", "small rotation magnitude"},
                      {"large", "0.1", "large rotation magnitude"},
                      {"resolution", "512", "affine quadrature grid"},
                      {"seed", "1", "random seed"}},
                     cmd_verify});
        c.push_back({"figures", "desk-scale figure data: image strips and CSVs",
                     with_flow({{"quick", "false", "smaller ensembles", OptionKind::flag},
                                {"seed", "5", "disk placement seed"},
                                {"interp-epsilon", "1", "consistency threshold for the interpolation strip"}}),
                     cmd_figures});
        return c;
    }();
    return list;
}

inline const Command* find_command(const std::string& name) {
    for (const Command& c : commands())
        if (c.name == name) return &c;
    return nullptr;
}

/// key=value file, or a manifest.json from an earlier run.
inline std::map<std::string, std::string> read_config(const fs::path& p) {
    if (!fs::exists(p)) throw ConfigError("cannot open config " + p.string());
    if (p.extension() != ".json") return io::read_key_values(p);
    std::map<std::string, std::string> kv;
    json j;
    try {
        j = read_json(p);
        kv["command"] = j.at("command").get<std::string>();
        for (const auto& [k, v] : j.at("config").items()) kv[k] = v.get<std::string>();
    } catch (const std::exception& e) {
        throw ConfigError(p.string() + ": not a run manifest (" + e.what() + ")");
    }
    return kv;
}

inline std::string absolute_path(const std::string& s) {
    return s.empty() ? s : fs::absolute(fs::path(s)).lexically_normal().string();
}

inline void finish(Context& c) {
    c.outputs.insert("report.json");
    c.outputs.insert("run.conf");
    write_json(c.out / "report.json", c.report);
    {
        std::ofstream os(c.out / "run.conf");
        os << "command = " << c.command << '\n';
        for (const auto& [k, v] : c.values) os << k << " = " << v << '\n';
        if (!os) throw DataError("failed writing run.conf");
    }
    json m;
    m["tool"] = tool_name;
    m["version"] = tool_version;
    m["command"] = c.command;
    json cfg = json::object();
    for (const auto& [k, v] : c.values) cfg[k] = v;
    m["config"] = cfg;
    m["inputs"] = std::vector<std::string>(c.inputs.begin(), c.inputs.end());
    m["outputs"] = std::vector<std::string>(c.outputs.begin(), c.outputs.end());
    for (const auto& [k, v] : c.extra.items()) m[k] = v;
    write_json(c.out / "manifest.json", m);
}

} // namespace detail

/// Runs one command line. Returns 0 on success, 2 for configuration errors,
/// 3 for data errors and 4 for numerical failures; failures print one
/// "error: <kind>: <message>" line on stderr.
inline int run(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    auto fail = [](const char* kind, const std::string& msg, int code) {
        std::string line = msg;
        std::replace(line.begin(), line.end(), '\n', ' ');
        std::cerr << "error: " << kind << ": " << line << '\n';
        return code;
    };
    try {
        std::map<std::string, std::string> kv;
        for (std::size_t k = 0; k < args.size(); ++k) {
            if (args[k] == "--config" && k + 1 < args.size()) kv = detail::read_config(args[k + 1]);
            if (args[k].rfind("--config=", 0) == 0) kv = detail::read_config(args[k].substr(9));
        }
        bool has_command = false;
        for (std::size_t k = 0; k < args.size(); ++k) {
            const bool is_value = k > 0 && args[k - 1].rfind("--", 0) == 0 && args[k - 1].find('=') == std::string::npos;
            if (detail::find_command(args[k]) && !is_value) has_command = true;
        }
        if (!has_command && kv.count("command")) args.insert(args.begin(), kv.at("command"));

        CLI::App app{"Optical flow manifold toolkit", tool_name};
        app.set_version_flag("--version", tool_version);
        app.set_help_flag("--help", "print help");
        app.require_subcommand(1);
        std::string config_path;
        app.add_option("--config", config_path, "key=value file or run manifest; flags override it");

        struct Bound {
            std::string value;
            std::vector<std::string> items;
            CLI::Option* option = nullptr;
        };
        std::map<std::string, std::map<std::string, Bound>> bound;
        for (const Command& cmd : detail::commands()) {
            CLI::App* sub = app.add_subcommand(cmd.name, cmd.description);
            sub->set_help_flag("--help", "print help");
            sub->fallthrough();
            auto& slots = bound[cmd.name];
            std::vector<OptionDef> opts = cmd.options;
            opts.push_back({"out", "", "output directory", OptionKind::path});
            for (const OptionDef& o : opts) {
                Bound& b = slots[o.name];
                b.value = o.fallback;
                const std::string help = o.help + (o.fallback.empty() ? "" : " [" + o.fallback + "]");
                if (o.kind == OptionKind::flag) {
                    b.option = sub->add_flag("--" + o.name + "{true}", b.value, help);
                } else if (o.kind == OptionKind::paths) {
                    b.option = sub->add_option("--" + o.name, b.items, help)->delimiter(',');
                } else {
                    b.option = sub->add_option("--" + o.name, b.value, help)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
                }
            }
        }
        try {
            std::vector<std::string> reversed(args.rbegin(), args.rend());
            app.parse(reversed);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForVersion& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            return fail("config", e.what(), 2);
        }

        const CLI::App* chosen = app.get_subcommands().front();
        const std::string name = chosen->get_name();
        const Command& cmd = *detail::find_command(name);
        auto& slots = bound.at(name);
        Context ctx;
        ctx.command = name;
        for (auto& [key, b] : slots) {
            if (b.option->count() > 0 && !b.items.empty()) {
                std::string joined;
                for (const auto& s : b.items) joined += (joined.empty() ? "" : ",") + s;
                b.value = joined;
            }
        }
        for (const auto& [key, value] : kv) {
            if (key == "command") continue;
            const auto it = slots.find(key);
            if (it == slots.end()) throw ConfigError("config key '" + key + "' does not apply to '" + name + "'");
            if (it->second.option->count() == 0) it->second.value = value;
        }
        std::map<std::string, OptionKind> kinds;
        for (const OptionDef& o : cmd.options) kinds[o.name] = o.kind;
        kinds["out"] = OptionKind::path;
        for (auto& [key, b] : slots) {
            if (kinds[key] == OptionKind::path) b.value = detail::absolute_path(b.value);
            if (kinds[key] == OptionKind::paths) {
                std::string joined;
                for (const auto& s : io::split(b.value, ','))
                    if (!io::trim(s).empty()) joined += (joined.empty() ? "" : ",") + detail::absolute_path(io::trim(s));
                b.value = joined;
            }
            ctx.values[key] = b.value;
        }
        if (ctx.values.at("out").empty()) throw ConfigError("--out is required");
        ctx.out = ctx.values.at("out");
        if (ctx.values.count("alpha")) detail::flow_config(ctx);  // reject bad settings before reading inputs
        fs::create_directories(ctx.out);
        cmd.body(ctx);
        detail::finish(ctx);
        return 0;
    } catch (const Error& e) {
        return fail(kind_name(e.kind()), e.what(), static_cast<int>(e.kind()));
    } catch (const fs::filesystem_error& e) {
        return fail("data", e.what(), 3);
    } catch (const std::exception& e) {
        return fail("numerical", e.what(), 4);
    }
}

} // namespace ofmkit::cli
