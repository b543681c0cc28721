#pragma once

// Confidence estimators over pre-softmax features: the softmax score and the
// Bayes posterior under per-class diagonal Gaussians fitted to training
// features. Densities are widened by a variance scale (the feature dimension
// by default) and everything is evaluated in the log domain.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "densconf/error.hpp"
#include "densconf/math.hpp"
#include "densconf/netcore.hpp"

namespace densconf {

inline constexpr double kVarianceFloor = 1e-6;

struct SoftmaxConfidence {
    ClassIndex label = 0;
    double value = 0.0;
};

inline SoftmaxConfidence softmax_confidence(std::span<const double> z) {
    const auto p = softmax(z);
    const auto i = argmax(z);
    return {i, p[i]};
}

/// Executable witness of the softmax scaling pathology: for the strict
/// maximum z_i and any k > 1, the softmax score of class i grows under z -> k z.
///
/// The comparison is carried out on the log of the off-max part of the
/// softmax denominator, ln sum_{j != i} exp(k (z_j - z_i)), which is the
/// quantity whose decrease is equivalent to s_i(kz) > s_i(z). Working with it
/// directly keeps the inequality resolvable when s_i is within rounding of 1.
inline bool verify_softmax_scaling(std::span<const double> z, double k) {
    if (!(k > 1.0)) throw InputError("scaling factor must be > 1");
    if (z.size() < 2) throw InputError("need at least two classes");
    if (!all_finite(z)) throw InputError("non-finite feature vector");
    const std::size_t i = argmax(z);
    for (std::size_t j = 0; j < z.size(); ++j)
        if (j != i && z[j] == z[i]) throw InputError("maximum of z is not unique");

    std::vector<double> gaps, scaled;
    gaps.reserve(z.size() - 1);
    scaled.reserve(z.size() - 1);
    for (std::size_t j = 0; j < z.size(); ++j) {
        if (j == i) continue;
        gaps.push_back(z[j] - z[i]);
        scaled.push_back(k * (z[j] - z[i]));
    }
    return logsumexp(scaled) < logsumexp(gaps);
}

struct ClassDensity {
    std::vector<double> mu;
    std::vector<double> sigma2; // per-dimension variance before scaling
    double prior = 0.0;
    std::size_t count = 0;

    bool operator==(const ClassDensity&) const = default;
};

struct DensityModel {
    std::vector<ClassDensity> classes;
    std::size_t d = 0;
    double variance_scale = 1.0;

    bool fitted() const { return !classes.empty(); }
    std::size_t num_classes() const { return classes.size(); }

    bool operator==(const DensityModel&) const = default;
};

struct LabelledFeature {
    FeatureVector z;
    ClassIndex label = 0;
};

/// Per-class mean, population variance (floored) and empirical prior.
/// Classes are 0..max_label; each needs at least two samples. When
/// variance_scale is not given it defaults to the feature dimension.
inline DensityModel fit_densities(std::span<const LabelledFeature> features,
                                  std::optional<double> variance_scale = std::nullopt) {
    if (features.empty()) throw FitError("no features to fit");
    const std::size_t d = features.front().z.size();
    if (d == 0) throw FitError("empty feature vectors");
    ClassIndex max_label = 0;
    for (const auto& f : features) {
        if (f.z.size() != d) throw FitError("feature vectors have inconsistent dimension");
        if (!all_finite(f.z)) throw FitError("non-finite feature vector");
        max_label = std::max(max_label, f.label);
    }

    DensityModel m;
    m.d = d;
    m.variance_scale = variance_scale.value_or(static_cast<double>(d));
    if (!(m.variance_scale > 0.0) || !std::isfinite(m.variance_scale))
        throw FitError("variance scale must be positive and finite");
    m.classes.assign(max_label + 1, ClassDensity{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), 0.0, 0});

    for (const auto& f : features) {
        auto& c = m.classes[f.label];
        ++c.count;
        for (std::size_t j = 0; j < d; ++j) c.mu[j] += f.z[j];
    }
    for (std::size_t i = 0; i < m.classes.size(); ++i)
        if (m.classes[i].count < 2)
            throw FitError("class " + std::to_string(i) + " has " + std::to_string(m.classes[i].count) +
                           " samples; at least 2 are required");
    for (auto& c : m.classes)
        for (double& v : c.mu) v /= static_cast<double>(c.count);

    // Two-pass variance around the finished mean.
    for (const auto& f : features) {
        auto& c = m.classes[f.label];
        for (std::size_t j = 0; j < d; ++j) {
            const double dev = f.z[j] - c.mu[j];
            c.sigma2[j] += dev * dev;
        }
    }
    const auto total = static_cast<double>(features.size());
    for (auto& c : m.classes) {
        for (double& v : c.sigma2) v = std::max(v / static_cast<double>(c.count), kVarianceFloor);
        c.prior = static_cast<double>(c.count) / total;
    }
    return m;
}

inline void check_features(const DensityModel& m, std::span<const double> z) {
    if (!m.fitted()) throw StateError("density model has not been fitted");
    if (z.size() != m.d)
        throw InputError("feature vector has length " + std::to_string(z.size()) + ", density model expects " +
                         std::to_string(m.d));
    if (!all_finite(z)) throw InputError("non-finite feature vector");
}

/// ln N(z | mu_i, variance_scale * diag(sigma2_i))
inline double log_density(const DensityModel& m, std::span<const double> z, ClassIndex i) {
    check_features(m, z);
    if (i >= m.classes.size()) throw InputError("class index out of range");
    const auto& c = m.classes[i];
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double acc = 0.0;
    for (std::size_t j = 0; j < m.d; ++j) {
        const double v = m.variance_scale * c.sigma2[j];
        const double dev = z[j] - c.mu[j];
        acc += -0.5 * std::log(two_pi * v) - dev * dev / (2.0 * v);
    }
    return acc;
}

struct ConfidenceReport {
    ClassIndex label = 0;                 // argmax of z
    double softmax_conf = 0.0;            // softmax score of label
    std::vector<double> posterior;        // Bayes posterior over classes
    std::vector<double> log_densities;    // ln N(z | class i), no prior

    double density_conf() const { return posterior[label]; }
};

/// Posterior P(y_i | z) = N(z|i) P(i) / sum_j N(z|j) P(j), via log-sum-exp.
inline std::vector<double> density_posterior(const DensityModel& m, std::span<const double> z,
                                             std::vector<double>* log_densities = nullptr) {
    check_features(m, z);
    std::vector<double> logs(m.classes.size()), joint(m.classes.size());
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
        logs[i] = log_density(m, z, i);
        joint[i] = logs[i] + std::log(m.classes[i].prior);
    }
    const double norm = logsumexp(joint);
    std::vector<double> post(joint.size());
    for (std::size_t i = 0; i < joint.size(); ++i) post[i] = std::exp(joint[i] - norm);
    if (log_densities) *log_densities = std::move(logs);
    return post;
}

inline ConfidenceReport density_confidence(const DensityModel& m, std::span<const double> z) {
    ConfidenceReport r;
    r.posterior = density_posterior(m, z, &r.log_densities);
    if (z.size() != m.classes.size())
        throw InputError("label comes from argmax z, which needs one feature per class");
    const auto sc = softmax_confidence(z);
    r.label = sc.label;
    r.softmax_conf = sc.value;
    return r;
}

// ---- persistence ----

inline nlohmann::json to_json(const DensityModel& m) {
    nlohmann::json j;
    j["classes"] = nlohmann::json::array();
    for (const auto& c : m.classes)
        j["classes"].push_back({{"mu", c.mu}, {"sigma2", c.sigma2}, {"prior", c.prior}, {"count", c.count}});
    j["d"] = m.d;
    j["variance_scale"] = m.variance_scale;
    return j;
}

inline nlohmann::json to_json(const ConfidenceReport& r) {
    return {{"label", r.label},
            {"softmax_conf", r.softmax_conf},
            {"density_conf", r.density_conf()},
            {"posterior", r.posterior},
            {"log_densities", r.log_densities}};
}

/// Throws FormatError if a loaded model breaks any density invariant.
inline void validate_density(const DensityModel& m) {
    if (m.classes.empty()) throw FormatError("density model has no classes");
    if (m.d == 0) throw FormatError("density model has d = 0");
    if (!(m.variance_scale > 0.0) || !std::isfinite(m.variance_scale))
        throw FormatError("variance_scale must be positive and finite");
    double prior_sum = 0.0;
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
        const auto& c = m.classes[i];
        const std::string tag = "class " + std::to_string(i) + ": ";
        if (c.mu.size() != m.d || c.sigma2.size() != m.d) throw FormatError(tag + "vector length differs from d");
        if (!all_finite(c.mu)) throw FormatError(tag + "non-finite mean");
        for (double v : c.sigma2)
            if (!(v >= kVarianceFloor) || !std::isfinite(v)) throw FormatError(tag + "variance below floor");
        if (!(c.prior > 0.0 && c.prior <= 1.0)) throw FormatError(tag + "prior outside (0,1]");
        prior_sum += c.prior;
    }
    if (std::abs(prior_sum - 1.0) > 1e-9) throw FormatError("class priors do not sum to 1");
}

inline DensityModel density_from_json(const nlohmann::json& j) {
    DensityModel m;
    try {
        for (const auto& c : j.at("classes"))
            m.classes.push_back({c.at("mu").get<std::vector<double>>(), c.at("sigma2").get<std::vector<double>>(),
                                 c.at("prior").get<double>(), c.at("count").get<std::size_t>()});
        m.d = j.at("d").get<std::size_t>();
        m.variance_scale = j.at("variance_scale").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("density JSON: ") + e.what());
    }
    validate_density(m);
    return m;
}

inline void save_density(const DensityModel& m, const std::string& path) {
    detail::write_text_file(path, to_json(m).dump() + "\n");
}

inline DensityModel load_density(const std::string& path) {
    try {
        return density_from_json(detail::read_json_file(path));
    } catch (const FormatError& e) {
        throw FormatError("'" + path + "': " + e.what());
    }
}

/// Features of a labelled dataset, ready for fit_densities.
inline std::vector<LabelledFeature> extract_features(const ModelParams& p, std::span<const Sample> data) {
    std::vector<LabelledFeature> out;
    out.reserve(data.size());
    for (std::size_t n = 0; n < data.size(); ++n) {
        if (!data[n].label) throw InputError("sample " + std::to_string(n) + " is unlabelled");
        out.push_back({forward(p, data[n]), *data[n].label});
    }
    return out;
}

} // namespace densconf
