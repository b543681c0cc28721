#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "densconf/error.hpp"

namespace densconf {

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw InputError("argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

/// ln(sum_i exp(a_i)) evaluated with max-subtraction.
inline double logsumexp(std::span<const double> a) {
    if (a.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(a.begin(), a.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : a) s += std::exp(x - m);
    return m + std::log(s);
}

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Numerically stable softmax. Throws InputError on non-finite input.
inline std::vector<double> softmax(std::span<const double> z) {
    if (z.empty()) throw InputError("softmax of an empty vector");
    if (!all_finite(z)) throw InputError("softmax input contains non-finite values");
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> out(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - m);
        s += out[i];
    }
    for (double& p : out) p /= s;
    return out;
}

/// -ln softmax(z)[label]
inline double cross_entropy(std::span<const double> z, std::size_t label) {
    if (label >= z.size()) throw InputError("label out of range");
    return logsumexp(z) - z[label];
}

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

} // namespace densconf
