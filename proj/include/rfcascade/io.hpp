#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfcascade/engine.hpp"

namespace rfcascade {

/// I/O failure (missing file, short read, write error).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input content; carries the byte offset of the problem.
struct ParseError : std::runtime_error {
    std::size_t byte_offset;
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (byte " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
};

namespace detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("read failure on " + path);
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out.good()) throw IoError("write failure on " + path);
}

inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

// ---------------------------------------------------------------------------
// PGM (binary P5, maxval 255 or 65535, sample values mapped to [0, 1])

inline Image read_pgm(const std::string& path, double dx = 1.0, double dy = 1.0) {
    const std::string data = detail::read_file(path);
    std::size_t pos = 0;
    auto skip_ws = [&]() {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto token = [&]() {
        skip_ws();
        const std::size_t start = pos;
        while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
        if (start == pos) throw ParseError("unexpected end of PGM header", start);
        return data.substr(start, pos - start);
    };
    if (token() != "P5") throw ParseError("not a binary PGM (P5)", 0);
    int w, h, maxval;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        maxval = std::stoi(token());
    } catch (const std::exception&) {
        throw ParseError("malformed PGM header", pos);
    }
    if (w <= 0 || h <= 0 || (maxval != 255 && maxval != 65535))
        throw ParseError("unsupported PGM geometry or maxval", pos);
    if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos])))
        throw ParseError("missing whitespace after PGM maxval", pos);
    ++pos;

    const std::size_t bytes_per = maxval == 255 ? 1 : 2;
    const std::size_t need = static_cast<std::size_t>(w) * h * bytes_per;
    if (data.size() - pos < need) throw ParseError("truncated PGM pixel data", data.size());

    Image img = Image::zeros({w, h}, {dx, dy});
    const auto* raw = reinterpret_cast<const unsigned char*>(data.data() + pos);
    for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < w; ++ix) {
            const std::size_t i = (static_cast<std::size_t>(iy) * w + ix) * bytes_per;
            // 16-bit PGM is big-endian per the Netpbm convention
            const unsigned value = bytes_per == 1
                                       ? raw[i]
                                       : (static_cast<unsigned>(raw[i]) << 8 | raw[i + 1]);
            img.at(ix, iy) = static_cast<double>(value) / maxval;
        }
    }
    return img;
}

inline void write_pgm(const std::string& path, const Image& img, int maxval = 65535) {
    if (maxval != 255 && maxval != 65535)
        throw std::invalid_argument("write_pgm: maxval must be 255 or 65535");
    std::string out = "P5\n" + std::to_string(img.dims[0]) + " " + std::to_string(img.dims[1]) +
                      "\n" + std::to_string(maxval) + "\n";
    for (int iy = 0; iy < img.dims[1]; ++iy) {
        for (int ix = 0; ix < img.dims[0]; ++ix) {
            double v = img.at(ix, iy);
            v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            const unsigned q = static_cast<unsigned>(v * maxval + 0.5);
            if (maxval == 255) {
                out.push_back(static_cast<char>(q));
            } else {
                out.push_back(static_cast<char>(q >> 8));
                out.push_back(static_cast<char>(q & 0xff));
            }
        }
    }
    detail::write_file(path, out);
}

// ---------------------------------------------------------------------------
// RFVOL1: text header `RFVOL1 <width> <height> <frames> <dx> <dy> <dt>\n`
// followed by little-endian float32 samples, frame-major then row-major.

inline void write_rfvol(const std::string& path, const Volume& vol) {
    std::string out = "RFVOL1 " + std::to_string(vol.dims[0]) + " " + std::to_string(vol.dims[1]) +
                      " " + std::to_string(vol.dims[2]) + " " + detail::g17(vol.spacing[0]) + " " +
                      detail::g17(vol.spacing[1]) + " " + detail::g17(vol.spacing[2]) + "\n";
    out.reserve(out.size() + vol.size() * 4);
    for (const double d : vol.values) {
        const float f = static_cast<float>(d);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        out.push_back(static_cast<char>(bits & 0xff));
        out.push_back(static_cast<char>((bits >> 8) & 0xff));
        out.push_back(static_cast<char>((bits >> 16) & 0xff));
        out.push_back(static_cast<char>((bits >> 24) & 0xff));
    }
    detail::write_file(path, out);
}

inline Volume read_rfvol(const std::string& path) {
    const std::string data = detail::read_file(path);
    const std::size_t nl = data.find('\n');
    if (nl == std::string::npos) throw ParseError("missing RFVOL1 header line", 0);
    std::istringstream hdr(data.substr(0, nl));
    std::string magic;
    int w = 0, h = 0, frames = 0;
    double dx = 0, dy = 0, dt = 0;
    hdr >> magic >> w >> h >> frames >> dx >> dy >> dt;
    if (!hdr || magic != "RFVOL1" || w <= 0 || h <= 0 || frames <= 0 || dx <= 0 || dy <= 0 ||
        dt <= 0)
        throw ParseError("malformed RFVOL1 header", 0);
    const std::size_t need = static_cast<std::size_t>(w) * h * frames * 4;
    if (data.size() - nl - 1 < need) throw ParseError("truncated RFVOL1 data", data.size());
    Volume vol = Volume::zeros({w, h, frames}, {dx, dy, dt});
    const auto* raw = reinterpret_cast<const unsigned char*>(data.data() + nl + 1);
    for (std::size_t i = 0; i < vol.size(); ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
        float f;
        std::memcpy(&f, &bits, 4);
        vol.values[i] = static_cast<double>(f);
    }
    return vol;
}

// ---------------------------------------------------------------------------
// kernel / field CSV emission: one row per sample, x1,x2[,t],value

inline std::string kernel_to_csv(const Kernel2& k) {
    std::string out = "x1,x2,value\n";
    std::size_t i = 0;
    for (int iy = 0; iy < k.dims[1]; ++iy)
        for (int ix = 0; ix < k.dims[0]; ++ix, ++i)
            out += detail::g17((ix - k.origin[0]) * k.spacing[0]) + "," +
                   detail::g17((iy - k.origin[1]) * k.spacing[1]) + "," +
                   detail::g17(k.values[i]) + "\n";
    return out;
}

inline std::string kernel_to_csv(const Kernel3& k) {
    std::string out = "x1,x2,t,value\n";
    std::size_t i = 0;
    for (int it = 0; it < k.dims[2]; ++it)
        for (int iy = 0; iy < k.dims[1]; ++iy)
            for (int ix = 0; ix < k.dims[0]; ++ix, ++i)
                out += detail::g17((ix - k.origin[0]) * k.spacing[0]) + "," +
                       detail::g17((iy - k.origin[1]) * k.spacing[1]) + "," +
                       detail::g17((it - k.origin[2]) * k.spacing[2]) + "," +
                       detail::g17(k.values[i]) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// plain-text key=value configuration

struct Config {
    std::map<std::string, std::string> values;
    std::vector<std::string> targets;   ///< repeated `target` keys, in order

    bool has(const std::string& key) const { return values.count(key) != 0; }

    std::string get(const std::string& key, const std::string& fallback = "") const {
        const auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' is not a number");
        }
    }

    int get_int(const std::string& key, int fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            return std::stoi(it->second);
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' is not an integer");
        }
    }
};

/// Recognized configuration keys; anything else is rejected.
inline const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "family",  "spacing_x", "spacing_y", "spacing_t", "trunc",  "exp_trunc",
        "eps_var", "tolerance", "threads",   "normalize", "target",
    };
    return keys;
}

inline Config parse_config(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key=value");
        auto trim = [](std::string s) {
            const std::size_t lo = s.find_first_not_of(" \t\r");
            const std::size_t hi = s.find_last_not_of(" \t\r");
            return lo == std::string::npos ? std::string() : s.substr(lo, hi - lo + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        bool known = false;
        for (const auto& k : config_keys()) known |= (k == key);
        if (!known)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": unknown key '" + key + "'");
        if (key == "target") {
            cfg.targets.push_back(value);
        } else {
            cfg.values[key] = value;
        }
    }
    for (const char* tol_key : {"tolerance", "trunc", "exp_trunc", "eps_var"}) {
        if (cfg.has(tol_key) && !(cfg.get_double(tol_key, 1.0) > 0.0))
            throw std::invalid_argument(std::string("config: ") + tol_key + " must be positive");
    }
    return cfg;
}

inline Config load_config(const std::string& path) { return parse_config(detail::read_file(path)); }

/// Parse a bank target: `s p11 p12 p22 [tau v1 v2 [c]]` (sigma entries are
/// the covariance matrix, not its product with s).
inline STParams parse_target(const std::string& text) {
    std::istringstream in(text);
    std::vector<double> nums;
    double x;
    while (in >> x) nums.push_back(x);
    if (!in.eof()) throw std::invalid_argument("target: trailing garbage in '" + text + "'");
    STParams p;
    if (nums.size() != 4 && nums.size() != 7 && nums.size() != 8)
        throw std::invalid_argument("target: expected 4, 7 or 8 numbers in '" + text + "'");
    p.s = nums[0];
    p.sigma = {nums[1], nums[2], nums[3]};
    if (nums.size() >= 7) {
        p.tau = nums[4];
        p.v = {nums[5], nums[6]};
    }
    if (nums.size() == 8) p.c = nums[7];
    p.validate();
    return p;
}

} // namespace rfcascade
