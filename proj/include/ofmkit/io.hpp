#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ofmkit/error.hpp"
#include "ofmkit/image.hpp"

namespace ofmkit::io {

namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline std::uint32_t get_u32le(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32le(std::ostream& os, float f) { put_u32le(os, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32le(std::istream& is) { return std::bit_cast<float>(get_u32le(is)); }

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    return is;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    return os;
}

// Next whitespace-delimited header token, skipping '#' comments.
inline std::string header_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw DataError("truncated header");
    return tok;
}

inline int header_int(std::istream& is) {
    const std::string tok = header_token(is);
    try {
        return std::stoi(tok);
    } catch (const std::exception&) {
        throw DataError("malformed header field '" + tok + "'");
    }
}

} // namespace detail

// --- PGM (P5) -----------------------------------------------------------------

/// Reads an 8- or 16-bit binary PGM, normalizing intensities to [0, 1].
inline Image read_pgm(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    if (detail::header_token(is) != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
    const int w = detail::header_int(is);
    const int h = detail::header_int(is);
    const int maxval = detail::header_int(is);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw DataError(path.string() + ": bad PGM header");
    std::vector<double> data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    const double scale = 1.0 / maxval;
    if (maxval < 256) {
        std::vector<unsigned char> raw(data.size());
        if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
            throw DataError(path.string() + ": truncated PGM data");
        for (std::size_t k = 0; k < raw.size(); ++k) data[k] = raw[k] * scale;
    } else {
        std::vector<unsigned char> raw(2 * data.size());
        if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
            throw DataError(path.string() + ": truncated PGM data");
        for (std::size_t k = 0; k < data.size(); ++k)
            data[k] = ((static_cast<unsigned>(raw[2 * k]) << 8) | raw[2 * k + 1]) * scale;
    }
    return Image(w, h, std::move(data));
}

/// Writes a binary PGM; intensities are clamped to [0, 1] and rounded.
inline void write_pgm(const std::filesystem::path& path, const Image& image, int bits = 8) {
    if (bits != 8 && bits != 16) throw ConfigError("write_pgm: bits must be 8 or 16");
    auto os = detail::open_out(path);
    const int maxval = bits == 8 ? 255 : 65535;
    os << "P5\n" << image.width() << ' ' << image.height() << '\n' << maxval << '\n';
    for (double v : image.data()) {
        const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
        if (bits == 8) {
            os.put(static_cast<char>(q));
        } else {
            os.put(static_cast<char>(q >> 8));
            os.put(static_cast<char>(q & 0xff));
        }
    }
    if (!os) throw DataError("failed writing " + path.string());
}

// --- PFM (grayscale, little-endian float32) ------------------------------------

inline void write_pfm(const std::filesystem::path& path, const Image& image) {
    auto os = detail::open_out(path);
    os << "Pf\n" << image.width() << ' ' << image.height() << "\n-1.0\n";
    // PFM stores rows bottom to top.
    for (int y = image.height() - 1; y >= 0; --y)
        for (int x = 0; x < image.width(); ++x) detail::put_f32le(os, static_cast<float>(image(x, y)));
    if (!os) throw DataError("failed writing " + path.string());
}

inline Image read_pfm(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    if (detail::header_token(is) != "Pf") throw DataError(path.string() + ": not a grayscale PFM");
    const int w = detail::header_int(is);
    const int h = detail::header_int(is);
    const std::string scale_tok = detail::header_token(is);
    double scale = 0.0;
    try {
        scale = std::stod(scale_tok);
    } catch (const std::exception&) {
        throw DataError(path.string() + ": bad PFM scale");
    }
    if (w < 1 || h < 1) throw DataError(path.string() + ": bad PFM header");
    if (scale >= 0.0) throw DataError(path.string() + ": big-endian PFM is not supported");
    std::vector<double> data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x)
            data[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] =
                detail::get_f32le(is);
    return Image(w, h, std::move(data));
}

/// Dispatches on extension (.pgm or .pfm).
inline Image read_image(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".pfm") return read_pfm(path);
    if (ext == ".pgm") return read_pgm(path);
    throw DataError(path.string() + ": unsupported image extension '" + ext + "'");
}

inline void write_image(const std::filesystem::path& path, const Image& image) {
    const auto ext = path.extension().string();
    if (ext == ".pfm") return write_pfm(path, image);
    if (ext == ".pgm") return write_pgm(path, image);
    throw ConfigError(path.string() + ": unsupported image extension '" + ext + "'");
}

// --- Middlebury .flo -------------------------------------------------------------

inline constexpr float flo_magic = 202021.25f;

inline void write_flo(const std::filesystem::path& path, const FlowField& flow) {
    auto os = detail::open_out(path);
    detail::put_f32le(os, flo_magic);
    detail::put_u32le(os, static_cast<std::uint32_t>(flow.width));
    detail::put_u32le(os, static_cast<std::uint32_t>(flow.height));
    for (std::size_t k = 0; k < flow.size(); ++k) {
        detail::put_f32le(os, static_cast<float>(flow.vx[k]));
        detail::put_f32le(os, static_cast<float>(flow.vy[k]));
    }
    if (!os) throw DataError("failed writing " + path.string());
}

inline FlowField read_flo(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    if (detail::get_f32le(is) != flo_magic) throw DataError(path.string() + ": bad .flo magic");
    const auto w = static_cast<std::int32_t>(detail::get_u32le(is));
    const auto h = static_cast<std::int32_t>(detail::get_u32le(is));
    if (w < 1 || h < 1 || static_cast<long long>(w) * h > (1LL << 28))
        throw DataError(path.string() + ": bad .flo dimensions");
    FlowField flow(w, h);
    for (std::size_t k = 0; k < flow.size(); ++k) {
        flow.vx[k] = detail::get_f32le(is);
        flow.vy[k] = detail::get_f32le(is);
    }
    if (!flow.is_finite()) throw DataError(path.string() + ": non-finite displacement");
    return flow;
}

// --- CSV ----------------------------------------------------------------------

inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

inline double parse_double(const std::string& tok) {
    if (tok == "inf" || tok == "+inf" || tok == "Inf") return std::numeric_limits<double>::infinity();
    if (tok == "-inf") return -std::numeric_limits<double>::infinity();
    try {
        std::size_t pos = 0;
        const double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw DataError("trailing characters in number '" + tok + "'");
        return v;
    } catch (const std::invalid_argument&) {
        throw DataError("not a number: '" + tok + "'");
    } catch (const std::out_of_range&) {
        throw DataError("number out of range: '" + tok + "'");
    }
}

inline void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                             const std::vector<std::string>& header = {}) {
    auto os = detail::open_out(path);
    for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "," : "") << header[c];
    if (!header.empty()) os << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << format_double(m(i, j));
        os << '\n';
    }
}

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Reads a numeric CSV; a first row that does not parse as numbers is treated as a header.
inline Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty()) continue;
        std::vector<double> row;
        try {
            for (const auto& tok : split(line, ',')) row.push_back(parse_double(trim(tok)));
        } catch (const DataError&) {
            if (first) {
                first = false;
                continue;
            }
            throw;
        }
        first = false;
        if (!rows.empty() && row.size() != rows.front().size())
            throw DataError(path.string() + ": ragged CSV rows");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError(path.string() + ": empty CSV");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return m;
}

// --- key=value configuration ----------------------------------------------------

/// Parses `key = value` lines; '#' starts a comment.
inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

} // namespace ofmkit::io
