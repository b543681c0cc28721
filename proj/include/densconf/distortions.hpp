#pragma once

// Grayscale image corruptions: additive Gaussian noise, separable Gaussian
// blur and a JPEG quantization round trip (8x8 DCT-II with the IJG quality
// scaling of the standard luminance table, no entropy coding).

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "densconf/error.hpp"
#include "densconf/netcore.hpp"
#include "densconf/rng.hpp"

namespace densconf {

struct ImageGrid {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> pixels; // row-major

    double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
    double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }

    bool operator==(const ImageGrid&) const = default;
};

inline void validate_image(const ImageGrid& img) {
    if (img.width == 0 || img.height == 0) throw InputError("image has a zero dimension");
    if (img.width * img.height != img.pixels.size()) throw InputError("image size does not match pixel count");
}

inline ImageGrid to_image(const Sample& s, std::size_t width, std::size_t height) {
    ImageGrid img{width, height, s.pixels};
    validate_image(img);
    return img;
}

/// Square image view of a flattened sample.
inline ImageGrid to_image(const Sample& s) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(s.pixels.size()))));
    if (side * side != s.pixels.size())
        throw InputError("sample of length " + std::to_string(s.pixels.size()) + " is not a square image");
    return to_image(s, side, side);
}

inline void clamp_unit(std::span<double> v) {
    for (double& p : v) p = std::clamp(p, 0.0, 1.0);
}

inline ImageGrid gaussian_noise(ImageGrid img, double sigma, std::uint64_t seed) {
    validate_image(img);
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InputError("noise sigma must be >= 0");
    if (sigma == 0.0) return img;
    Rng rng(seed);
    for (double& p : img.pixels) p += sigma * rng.normal();
    clamp_unit(img.pixels);
    return img;
}

/// Mirror index into [0, n) without repeating the edge sample (dcb|abcd|cba).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

/// Normalized taps w[-r..r] with r = ceil(3 sigma), stored from index 0.
inline std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) throw InputError("kernel sigma must be > 0");
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
        const double v = std::exp(-static_cast<double>(t * t) / (2.0 * sigma * sigma));
        w[static_cast<std::size_t>(t + radius)] = v;
        sum += v;
    }
    for (double& v : w) v /= sum;
    return w;
}

inline ImageGrid gaussian_blur(const ImageGrid& img, double sigma) {
    validate_image(img);
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InputError("blur sigma must be >= 0");
    if (sigma == 0.0) return img;
    const auto w = gaussian_kernel(sigma);
    const auto radius = static_cast<std::ptrdiff_t>(w.size() / 2);

    ImageGrid tmp = img, out = img;
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t t = -radius; t <= radius; ++t)
                acc += w[static_cast<std::size_t>(t + radius)] *
                       img.at(reflect_index(static_cast<std::ptrdiff_t>(x) + t, img.width), y);
            tmp.at(x, y) = acc;
        }
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t t = -radius; t <= radius; ++t)
                acc += w[static_cast<std::size_t>(t + radius)] *
                       tmp.at(x, reflect_index(static_cast<std::ptrdiff_t>(y) + t, img.height));
            out.at(x, y) = acc;
        }
    clamp_unit(out.pixels);
    return out;
}

// ---- JPEG quantization round trip ----

using Block8 = std::array<double, 64>;

inline constexpr std::array<int, 64> kLuminanceQuant = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

/// Luminance table for a quality in [1,100] using the IJG scaling.
inline std::array<int, 64> quant_table(int quality) {
    if (quality < 1 || quality > 100) throw InputError("JPEG quality must be in [1,100]");
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<int, 64> t{};
    for (std::size_t i = 0; i < 64; ++i) t[i] = std::clamp((kLuminanceQuant[i] * scale + 50) / 100, 1, 255);
    return t;
}

namespace detail {

// Orthonormal DCT-II basis: C[u][x] = a(u) cos((2x+1) u pi / 16).
inline const std::array<double, 64>& dct_basis() {
    static const std::array<double, 64> basis = [] {
        std::array<double, 64> c{};
        for (int u = 0; u < 8; ++u)
            for (int x = 0; x < 8; ++x) {
                const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
                c[static_cast<std::size_t>(u * 8 + x)] = a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
            }
        return c;
    }();
    return basis;
}

// Applies the basis along rows then columns; inverse uses its transpose.
inline Block8 separable_transform(const Block8& in, bool inverse) {
    const auto& c = dct_basis();
    Block8 tmp{}, out{};
    // rows
    for (int r = 0; r < 8; ++r)
        for (int k = 0; k < 8; ++k) {
            double acc = 0.0;
            for (int n = 0; n < 8; ++n)
                acc += in[static_cast<std::size_t>(r * 8 + n)] *
                       (inverse ? c[static_cast<std::size_t>(n * 8 + k)] : c[static_cast<std::size_t>(k * 8 + n)]);
            tmp[static_cast<std::size_t>(r * 8 + k)] = acc;
        }
    // columns
    for (int k = 0; k < 8; ++k)
        for (int col = 0; col < 8; ++col) {
            double acc = 0.0;
            for (int n = 0; n < 8; ++n)
                acc += tmp[static_cast<std::size_t>(n * 8 + col)] *
                       (inverse ? c[static_cast<std::size_t>(n * 8 + k)] : c[static_cast<std::size_t>(k * 8 + n)]);
            out[static_cast<std::size_t>(k * 8 + col)] = acc;
        }
    return out;
}

} // namespace detail

/// Orthonormal 2-D DCT-II of a row-major 8x8 block.
inline Block8 dct8x8(const Block8& block) { return detail::separable_transform(block, false); }

/// Inverse of dct8x8 (DCT-III).
inline Block8 idct8x8(const Block8& coeffs) { return detail::separable_transform(coeffs, true); }

inline ImageGrid jpeg_compress(const ImageGrid& img, int quality) {
    validate_image(img);
    const auto table = quant_table(quality);
    const std::size_t pw = (img.width + 7) / 8 * 8;
    const std::size_t ph = (img.height + 7) / 8 * 8;

    ImageGrid out = img;
    for (std::size_t by = 0; by < ph; by += 8)
        for (std::size_t bx = 0; bx < pw; bx += 8) {
            Block8 block{};
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x) {
                    const auto sx = reflect_index(static_cast<std::ptrdiff_t>(bx + x), img.width);
                    const auto sy = reflect_index(static_cast<std::ptrdiff_t>(by + y), img.height);
                    block[y * 8 + x] = img.at(sx, sy) * 255.0 - 128.0;
                }
            auto coeffs = dct8x8(block);
            for (std::size_t i = 0; i < 64; ++i) {
                const double q = table[i];
                coeffs[i] = std::round(coeffs[i] / q) * q;
            }
            const auto rec = idct8x8(coeffs);
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x) {
                    const std::size_t ix = bx + x, iy = by + y;
                    if (ix < img.width && iy < img.height)
                        out.at(ix, iy) = std::clamp((rec[y * 8 + x] + 128.0) / 255.0, 0.0, 1.0);
                }
        }
    return out;
}

// ---- distortion specs ----

enum class DistortionKind { gaussian_noise, gaussian_blur, jpeg };

inline std::string_view to_string(DistortionKind k) {
    switch (k) {
    case DistortionKind::gaussian_noise: return "noise";
    case DistortionKind::gaussian_blur: return "blur";
    case DistortionKind::jpeg: return "jpeg";
    }
    return "?";
}

inline DistortionKind parse_distortion_kind(std::string_view s) {
    if (s == "noise" || s == "gaussian_noise") return DistortionKind::gaussian_noise;
    if (s == "blur" || s == "gaussian_blur") return DistortionKind::gaussian_blur;
    if (s == "jpeg") return DistortionKind::jpeg;
    throw ConfigError("unknown distortion kind '" + std::string(s) + "'");
}

struct DistortionSpec {
    DistortionKind kind = DistortionKind::gaussian_noise;
    double level = 0.0;
    std::uint64_t seed = 0;
};

inline void validate_distortion(const DistortionSpec& d) {
    if (!std::isfinite(d.level)) throw ConfigError("distortion level must be finite");
    if (d.kind == DistortionKind::jpeg) {
        if (d.level != std::floor(d.level) || d.level < 1.0 || d.level > 100.0)
            throw ConfigError("JPEG quality must be an integer in [1,100]");
    } else if (d.level < 0.0) {
        throw ConfigError("distortion level must be >= 0");
    }
}

inline double parse_number(std::string_view s, std::string_view what) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end || s.empty())
        throw ConfigError("cannot parse " + std::string(what) + " '" + std::string(s) + "'");
    return v;
}

/// Parses "noise:0.3", "blur:1.2" or "jpeg:20".
inline DistortionSpec parse_distortion(std::string_view text, std::uint64_t seed = 0) {
    const auto colon = text.find(':');
    if (colon == std::string_view::npos)
        throw ConfigError("distortion must look like kind:level, got '" + std::string(text) + "'");
    DistortionSpec d;
    d.kind = parse_distortion_kind(text.substr(0, colon));
    d.level = parse_number(text.substr(colon + 1), "distortion level");
    d.seed = seed;
    validate_distortion(d);
    return d;
}

inline ImageGrid apply_distortion(const ImageGrid& img, const DistortionSpec& d) {
    validate_distortion(d);
    switch (d.kind) {
    case DistortionKind::gaussian_noise: return gaussian_noise(img, d.level, d.seed);
    case DistortionKind::gaussian_blur: return gaussian_blur(img, d.level);
    case DistortionKind::jpeg: return jpeg_compress(img, static_cast<int>(d.level));
    }
    return img;
}

inline Sample apply_distortion(const Sample& s, const DistortionSpec& d) {
    return {apply_distortion(to_image(s), d).pixels, s.label};
}

} // namespace densconf
