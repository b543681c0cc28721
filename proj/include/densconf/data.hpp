#pragma once

// Datasets: big-endian IDX files (MNIST layout), Gaussian blobs, and a
// procedural 28x28 handwritten-digit stand-in used when no MNIST files are
// available.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "densconf/distortions.hpp"
#include "densconf/error.hpp"
#include "densconf/netcore.hpp"
#include "densconf/rng.hpp"

namespace densconf {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(std::span<const unsigned char> bytes, std::size_t offset, const std::string& path) {
    if (offset + 4 > bytes.size())
        throw FormatError("'" + path + "': truncated header", static_cast<long long>(bytes.size()));
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

inline void write_bytes(const std::string& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write to '" + path + "' failed");
}

} // namespace detail

struct IdxImages {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::vector<double>> images;
};

inline IdxImages read_idx_images(const std::string& path) {
    const auto bytes = detail::read_bytes(path);
    const auto magic = detail::read_be32(bytes, 0, path);
    if (magic != kIdxImagesMagic) throw FormatError("'" + path + "': bad image magic", 0);
    const std::size_t count = detail::read_be32(bytes, 4, path);
    IdxImages out;
    out.rows = detail::read_be32(bytes, 8, path);
    out.cols = detail::read_be32(bytes, 12, path);
    const std::size_t per = out.rows * out.cols;
    const std::size_t need = 16 + count * per;
    if (bytes.size() < need)
        throw FormatError("'" + path + "': truncated, expected " + std::to_string(need) + " bytes",
                          static_cast<long long>(bytes.size()));
    out.images.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        std::vector<double> px(per);
        for (std::size_t k = 0; k < per; ++k) px[k] = bytes[16 + n * per + k] / 255.0;
        out.images.push_back(std::move(px));
    }
    return out;
}

inline std::vector<ClassIndex> read_idx_labels(const std::string& path) {
    const auto bytes = detail::read_bytes(path);
    const auto magic = detail::read_be32(bytes, 0, path);
    if (magic != kIdxLabelsMagic) throw FormatError("'" + path + "': bad label magic", 0);
    const std::size_t count = detail::read_be32(bytes, 4, path);
    if (bytes.size() < 8 + count)
        throw FormatError("'" + path + "': truncated, expected " + std::to_string(8 + count) + " bytes",
                          static_cast<long long>(bytes.size()));
    return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

/// Labelled samples from an IDX image/label file pair.
inline std::vector<Sample> load_idx(const std::string& images_path, const std::string& labels_path) {
    auto imgs = read_idx_images(images_path);
    const auto labels = read_idx_labels(labels_path);
    if (labels.size() != imgs.images.size())
        throw FormatError("'" + labels_path + "': " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(imgs.images.size()) + " images",
                          4);
    std::vector<Sample> out;
    out.reserve(labels.size());
    for (std::size_t n = 0; n < labels.size(); ++n) out.push_back({std::move(imgs.images[n]), labels[n]});
    return out;
}

inline unsigned char to_byte(double p) { return static_cast<unsigned char>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)); }

inline void write_idx_images(const std::string& path, std::span<const Sample> data, std::size_t rows, std::size_t cols) {
    std::vector<unsigned char> out;
    detail::put_be32(out, kIdxImagesMagic);
    detail::put_be32(out, static_cast<std::uint32_t>(data.size()));
    detail::put_be32(out, static_cast<std::uint32_t>(rows));
    detail::put_be32(out, static_cast<std::uint32_t>(cols));
    for (const auto& s : data) {
        if (s.pixels.size() != rows * cols) throw InputError("sample size does not match IDX geometry");
        for (double p : s.pixels) out.push_back(to_byte(p));
    }
    detail::write_bytes(path, out);
}

inline void write_idx_labels(const std::string& path, std::span<const Sample> data) {
    std::vector<unsigned char> out;
    detail::put_be32(out, kIdxLabelsMagic);
    detail::put_be32(out, static_cast<std::uint32_t>(data.size()));
    for (const auto& s : data) {
        if (!s.label || *s.label > 255) throw InputError("IDX labels must be present and fit in a byte");
        out.push_back(static_cast<unsigned char>(*s.label));
    }
    detail::write_bytes(path, out);
}

/// Binary PGM (P5) of a single image.
inline void write_pgm(const std::string& path, const ImageGrid& img) {
    const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    for (double p : img.pixels) out.push_back(to_byte(p));
    detail::write_bytes(path, out);
}

/// Gaussian blobs. Sample n belongs to class n % n_classes. Class means are
/// the vertices of a simplex scaled into the unit cube (0.25 + 0.5 e_c) when
/// dim >= n_classes, otherwise evenly spaced points on a circle in the first
/// two coordinates (or on a line when dim == 1). Isotropic noise of standard
/// deviation spread, then clamped to [0,1].
inline std::vector<Sample> make_synthetic(std::size_t n_classes, std::size_t n_per_class, std::size_t dim, double spread,
                                          std::uint64_t seed) {
    if (n_classes == 0 || n_per_class == 0 || dim == 0) throw InputError("synthetic dataset sizes must be positive");
    if (!(spread >= 0.0)) throw InputError("spread must be >= 0");
    std::vector<std::vector<double>> means(n_classes, std::vector<double>(dim, 0.25));
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (dim >= n_classes) {
            means[c][c] = 0.75;
        } else if (dim == 1) {
            means[c][0] = n_classes == 1 ? 0.5 : 0.1 + 0.8 * static_cast<double>(c) / static_cast<double>(n_classes - 1);
        } else {
            const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(n_classes);
            means[c][0] = 0.5 + 0.35 * std::cos(a);
            means[c][1] = 0.5 + 0.35 * std::sin(a);
        }
    }
    Rng rng(seed);
    std::vector<Sample> out;
    out.reserve(n_classes * n_per_class);
    for (std::size_t n = 0; n < n_classes * n_per_class; ++n) {
        const std::size_t c = n % n_classes;
        Sample s{means[c], c};
        if (spread > 0.0)
            for (double& p : s.pixels) p = std::clamp(p + spread * rng.normal(), 0.0, 1.0);
        out.push_back(std::move(s));
    }
    return out;
}

// ---- procedural digits ----

inline constexpr std::size_t kGlyphSide = 28;

namespace detail {

struct Point {
    double x, y;
};

using Stroke = std::vector<Point>;

inline Stroke ellipse(double cx, double cy, double rx, double ry, double from = 0.0, double to = 2.0 * std::numbers::pi,
                      int steps = 16) {
    Stroke s;
    for (int k = 0; k <= steps; ++k) {
        const double t = from + (to - from) * k / steps;
        s.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
    }
    return s;
}

// Digit skeletons in the unit square, y pointing down.
inline const std::array<std::vector<Stroke>, 10>& digit_strokes() {
    static const std::array<std::vector<Stroke>, 10> strokes = [] {
        std::array<std::vector<Stroke>, 10> d;
        d[0] = {ellipse(0.5, 0.5, 0.26, 0.38)};
        d[1] = {{{0.36, 0.26}, {0.52, 0.12}, {0.52, 0.88}}};
        d[2] = {{{0.26, 0.30}, {0.36, 0.15}, {0.55, 0.12}, {0.72, 0.22}, {0.72, 0.40}, {0.26, 0.88}, {0.78, 0.88}}};
        d[3] = {{{0.26, 0.18}, {0.50, 0.12}, {0.72, 0.22}, {0.70, 0.40}, {0.46, 0.50}, {0.72, 0.60}, {0.74, 0.78},
                 {0.50, 0.88}, {0.25, 0.82}}};
        d[4] = {{{0.64, 0.88}, {0.64, 0.12}, {0.22, 0.64}, {0.80, 0.64}}};
        d[5] = {{{0.75, 0.12}, {0.32, 0.12}, {0.28, 0.47}, {0.55, 0.42}, {0.74, 0.58}, {0.72, 0.78}, {0.50, 0.88},
                 {0.25, 0.82}}};
        d[6] = {{{0.70, 0.14}, {0.46, 0.20}, {0.31, 0.44}, {0.28, 0.70}, {0.40, 0.87}, {0.62, 0.87}, {0.72, 0.70},
                 {0.62, 0.53}, {0.42, 0.53}, {0.29, 0.66}}};
        d[7] = {{{0.22, 0.12}, {0.78, 0.12}, {0.42, 0.88}}};
        d[8] = {ellipse(0.5, 0.30, 0.20, 0.17), ellipse(0.5, 0.68, 0.24, 0.20)};
        d[9] = {ellipse(0.48, 0.33, 0.22, 0.20), {{0.70, 0.33}, {0.62, 0.88}}};
        return d;
    }();
    return strokes;
}

inline double segment_distance(Point p, Point a, Point b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

} // namespace detail

/// One procedural digit: random affine pose, control-point jitter, stroke
/// width and ink level, anti-aliased onto a 28x28 canvas with a 4 px margin.
inline Sample render_glyph(ClassIndex digit, Rng& rng) {
    if (digit > 9) throw InputError("glyph digit must be in [0,9]");
    const double angle = rng.uniform(-0.25, 0.25);
    const double sx = rng.uniform(0.75, 1.1), sy = rng.uniform(0.8, 1.1);
    const double shear = rng.uniform(-0.2, 0.2);
    const double tx = rng.uniform(-0.07, 0.07), ty = rng.uniform(-0.07, 0.07);
    const double half_width = rng.uniform(0.7, 1.6); // pixels
    const double ink = rng.uniform(0.7, 1.0);
    const double ca = std::cos(angle), sa = std::sin(angle);

    std::vector<detail::Stroke> strokes = detail::digit_strokes()[digit];
    for (auto& stroke : strokes)
        for (auto& pt : stroke) {
            double x = pt.x - 0.5 + rng.normal(0.0, 0.02), y = pt.y - 0.5 + rng.normal(0.0, 0.02);
            x = sx * (x + shear * y);
            y = sy * y;
            const double rx = ca * x - sa * y, ry = sa * x + ca * y;
            // map to pixel coordinates, 20 px drawing box
            pt = {4.0 + 20.0 * (rx + 0.5 + tx), 4.0 + 20.0 * (ry + 0.5 + ty)};
        }

    Sample s{std::vector<double>(kGlyphSide * kGlyphSide, 0.0), digit};
    for (std::size_t y = 0; y < kGlyphSide; ++y)
        for (std::size_t x = 0; x < kGlyphSide; ++x) {
            const detail::Point p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
            double dist = 1e9;
            for (const auto& stroke : strokes)
                for (std::size_t k = 0; k + 1 < stroke.size(); ++k)
                    dist = std::min(dist, detail::segment_distance(p, stroke[k], stroke[k + 1]));
            s.pixels[y * kGlyphSide + x] = ink * std::clamp(half_width + 0.5 - dist, 0.0, 1.0);
        }
    return s;
}

/// n procedural digits, sample k has class k % 10. Deterministic in seed.
inline std::vector<Sample> make_glyphs(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.push_back(render_glyph(k % 10, rng));
    return out;
}

// ---- dataset specs ----

enum class Split { train, test };

// Synthetic test splits draw from seed + this offset so they never coincide
// with the training split.
inline constexpr std::uint64_t kTestSeedOffset = 1'000'003;

/// Resolves a dataset spec string:
///   mnist                       IDX files in data_dir (train-*/t10k-* names)
///   idx:IMAGES,LABELS           explicit IDX pair (same files for both splits)
///   glyphs[:N]                  procedural 28x28 digits (default N = 6000)
///   blobs:CLASSES:PER:DIM:SPREAD  Gaussian blobs
inline std::vector<Sample> load_dataset(std::string_view spec, Split split, std::uint64_t seed,
                                        const std::string& data_dir = "data") {
    const auto colon = spec.find(':');
    const auto head = spec.substr(0, colon);
    const auto rest = colon == std::string_view::npos ? std::string_view{} : spec.substr(colon + 1);
    const std::uint64_t split_seed = split == Split::train ? seed : seed + kTestSeedOffset;

    auto count = [](std::string_view s, std::string_view what) {
        const double v = parse_number(s, what);
        if (v < 1 || v != std::floor(v)) throw ConfigError(std::string(what) + " must be a positive integer");
        return static_cast<std::size_t>(v);
    };

    if (head == "mnist") {
        const auto dir = std::filesystem::path(data_dir);
        const std::string prefix = split == Split::train ? "train" : "t10k";
        return load_idx((dir / (prefix + "-images-idx3-ubyte")).string(), (dir / (prefix + "-labels-idx1-ubyte")).string());
    }
    if (head == "idx") {
        const auto comma = rest.find(',');
        if (comma == std::string_view::npos) throw ConfigError("idx dataset needs idx:IMAGES,LABELS");
        return load_idx(std::string(rest.substr(0, comma)), std::string(rest.substr(comma + 1)));
    }
    if (head == "glyphs") return make_glyphs(rest.empty() ? 6000 : count(rest, "glyph count"), split_seed);
    if (head == "blobs") {
        std::vector<std::string_view> parts;
        std::string_view r = rest;
        while (!r.empty()) {
            const auto c = r.find(':');
            parts.push_back(r.substr(0, c));
            r = c == std::string_view::npos ? std::string_view{} : r.substr(c + 1);
        }
        if (parts.size() != 4) throw ConfigError("blobs dataset needs blobs:CLASSES:PER_CLASS:DIM:SPREAD");
        return make_synthetic(count(parts[0], "classes"), count(parts[1], "per-class count"), count(parts[2], "dim"),
                              parse_number(parts[3], "spread"), split_seed);
    }
    throw ConfigError("unknown dataset '" + std::string(spec) + "'");
}

} // namespace densconf
