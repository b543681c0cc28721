#pragma once

// Gradient-based adversarial examples: the one-step fast gradient sign method
// and the iterative minimal-perturbation (DeepFool-style) attack that
// linearizes the classifier at every step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "densconf/distortions.hpp"
#include "densconf/error.hpp"
#include "densconf/math.hpp"
#include "densconf/netcore.hpp"

namespace densconf {

struct AttackResult {
    Sample original;
    Sample perturbed;
    ClassIndex original_label = 0;
    ClassIndex perturbed_label = 0;
    int iterations = 0;
    double perturbation_norm = 0.0; // l2 of perturbed - original (after clamping)
    bool flipped = false;
    // Accumulated step before clamping to [0,1].
    std::vector<double> raw_perturbation;
};

namespace detail {

inline AttackResult finish_attack(const ModelParams& p, const Sample& x, ClassIndex original_label,
                                  std::vector<double> raw, int iterations) {
    AttackResult r;
    r.original = x;
    r.original_label = original_label;
    r.iterations = iterations;
    r.perturbed.label = x.label;
    r.perturbed.pixels.resize(x.pixels.size());
    std::vector<double> delta(x.pixels.size());
    for (std::size_t k = 0; k < x.pixels.size(); ++k) {
        r.perturbed.pixels[k] = std::clamp(x.pixels[k] + raw[k], 0.0, 1.0);
        delta[k] = r.perturbed.pixels[k] - x.pixels[k];
    }
    r.perturbation_norm = l2_norm(delta);
    r.perturbed_label = predict(p, r.perturbed);
    r.flipped = r.perturbed_label != original_label;
    r.raw_perturbation = std::move(raw);
    return r;
}

} // namespace detail

/// x' = clamp(x + eps * sign(grad_x CE(f(x), y)), 0, 1) with y the true label.
inline AttackResult fgsm(const ModelParams& p, const Sample& x, double eps) {
    if (!x.label) throw InputError("fgsm needs a labelled sample");
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw InputError("fgsm eps must be >= 0");
    const auto g = loss_grad_input(p, x.pixels, *x.label);
    std::vector<double> step(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) step[k] = g[k] > 0.0 ? eps : (g[k] < 0.0 ? -eps : 0.0);
    return detail::finish_attack(p, x, predict(p, x), std::move(step), 1);
}

inline constexpr double kDefaultOvershoot = 0.02;
inline constexpr int kDefaultMaxIter = 50;

/// Iterative minimal-perturbation attack against the predicted label.
///
/// Each step linearizes f at the current iterate and moves to the nearest
/// linearized boundary between the original class i and another class l:
///   l = argmin_{j != i} |z_j - z_i| / ||grad z_j - grad z_i||
///   r = |z_l - z_i| (grad z_l - grad z_i) / ||grad z_l - grad z_i||^2
/// The steps are accumulated and the iterate is x + (1 + overshoot) * sum r.
/// Gradients are taken at the unclamped iterate; the label test and the
/// returned sample use the iterate clamped to [0,1].
inline AttackResult deepfool(const ModelParams& p, const Sample& x, double overshoot = kDefaultOvershoot,
                             int max_iter = kDefaultMaxIter) {
    if (!(overshoot >= 0.0) || !std::isfinite(overshoot)) throw InputError("overshoot must be >= 0");
    if (max_iter < 1) throw InputError("max_iter must be >= 1");
    const ClassIndex orig = predict(p, x);
    const std::size_t dim = x.pixels.size();
    const std::size_t n_classes = p.num_classes();
    if (n_classes < 2) throw DegenerateModelError("attack needs at least two classes");

    std::vector<double> r_tot(dim, 0.0), raw(dim, 0.0), cur = x.pixels, candidate(dim);
    int it = 0;
    while (it < max_iter) {
        ++it;
        const auto lin = linearize(p, cur);
        const auto& gi = lin.grads[orig];

        double best = std::numeric_limits<double>::infinity();
        std::size_t target = n_classes;
        double best_w2 = 0.0;
        for (std::size_t j = 0; j < n_classes; ++j) {
            if (j == orig) continue;
            double w2 = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double w = lin.grads[j][k] - gi[k];
                w2 += w * w;
            }
            if (!(w2 > 0.0)) continue;
            const double dist = std::abs(lin.z[j] - lin.z[orig]) / std::sqrt(w2);
            if (dist < best) {
                best = dist;
                target = j;
                best_w2 = w2;
            }
        }
        if (target == n_classes)
            throw DegenerateModelError("all class gradients coincide; no boundary direction exists");

        const double scale = std::abs(lin.z[target] - lin.z[orig]) / best_w2;
        for (std::size_t k = 0; k < dim; ++k) {
            r_tot[k] += scale * (lin.grads[target][k] - gi[k]);
            raw[k] = (1.0 + overshoot) * r_tot[k];
            cur[k] = x.pixels[k] + raw[k];
            candidate[k] = std::clamp(cur[k], 0.0, 1.0);
        }
        if (predict(p, candidate) != orig) break;
    }
    return detail::finish_attack(p, x, orig, std::move(raw), it);
}

enum class AttackKind { fgsm, deepfool };

struct AttackSpec {
    AttackKind kind = AttackKind::deepfool;
    double eps = 0.0; // fgsm only
    double overshoot = kDefaultOvershoot;
    int max_iter = kDefaultMaxIter;
};

/// Parses "fgsm:EPS", "deepfool" or "deepfool:OVERSHOOT[:MAX_ITER]".
inline AttackSpec parse_attack(std::string_view text) {
    AttackSpec a;
    const auto colon = text.find(':');
    const auto head = text.substr(0, colon);
    const auto rest = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
    if (head == "fgsm") {
        if (rest.empty()) throw ConfigError("fgsm attack needs an eps, e.g. fgsm:0.1");
        a.kind = AttackKind::fgsm;
        a.eps = parse_number(rest, "fgsm eps");
        if (!(a.eps >= 0.0)) throw ConfigError("fgsm eps must be >= 0");
    } else if (head == "deepfool") {
        a.kind = AttackKind::deepfool;
        if (!rest.empty()) {
            const auto c2 = rest.find(':');
            a.overshoot = parse_number(rest.substr(0, c2), "overshoot");
            if (c2 != std::string_view::npos) {
                const double it = parse_number(rest.substr(c2 + 1), "max_iter");
                if (it != std::floor(it) || it < 1) throw ConfigError("max_iter must be a positive integer");
                a.max_iter = static_cast<int>(it);
            }
            if (!(a.overshoot >= 0.0)) throw ConfigError("overshoot must be >= 0");
        }
    } else {
        throw ConfigError("unknown attack '" + std::string(text) + "'");
    }
    return a;
}

inline AttackResult run_attack(const ModelParams& p, const Sample& x, const AttackSpec& a) {
    return a.kind == AttackKind::fgsm ? fgsm(p, x, a.eps) : deepfool(p, x, a.overshoot, a.max_iter);
}

inline nlohmann::json to_json(const AttackResult& r) {
    nlohmann::json j{{"original_label", r.original_label},
                     {"perturbed_label", r.perturbed_label},
                     {"flipped", r.flipped},
                     {"iterations", r.iterations},
                     {"perturbation_norm", r.perturbation_norm},
                     {"original", r.original.pixels},
                     {"perturbed", r.perturbed.pixels}};
    if (r.original.label) j["true_label"] = *r.original.label;
    return j;
}

} // namespace densconf
