#pragma once

// Dense feedforward classifier: the deterministic map from an input vector x
// to the pre-softmax feature vector z, plus SGD training and exact input
// gradients (reverse-mode) for the attacks.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "densconf/error.hpp"
#include "densconf/math.hpp"
#include "densconf/rng.hpp"

namespace densconf {

using ClassIndex = std::size_t;
using FeatureVector = std::vector<double>;

struct Sample {
    std::vector<double> pixels;
    std::optional<ClassIndex> label;
};

/// Throws InputError unless every pixel lies in [0,1].
inline void validate_sample(const Sample& s, std::size_t expected_dim) {
    if (s.pixels.size() != expected_dim)
        throw InputError("sample has " + std::to_string(s.pixels.size()) + " pixels, expected " +
                         std::to_string(expected_dim));
    for (double p : s.pixels)
        if (!(p >= 0.0 && p <= 1.0)) throw InputError("sample pixel outside [0,1]");
}

enum class Activation { relu, identity };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline Activation parse_activation(std::string_view s) {
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

struct LayerSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Activation activation = Activation::relu;

    bool operator==(const LayerSpec&) const = default;
};

struct Layer {
    LayerSpec spec;
    std::vector<double> weights; // out_dim x in_dim, row-major
    std::vector<double> bias;    // out_dim

    double weight(std::size_t row, std::size_t col) const { return weights[row * spec.in_dim + col]; }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(weights).subspan(r * spec.in_dim, spec.in_dim);
    }

    bool operator==(const Layer&) const = default;
};

struct ModelParams {
    std::vector<Layer> layers;
    std::uint64_t seed = 0;

    std::size_t input_dim() const { return layers.front().spec.in_dim; }
    std::size_t num_classes() const { return layers.back().spec.out_dim; }

    bool operator==(const ModelParams&) const = default;
};

struct TrainConfig {
    double learning_rate = 0.05;
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 0;
    // Keeps every bias at its current value (zero after init_params), so the
    // trained network stays positively homogeneous.
    bool freeze_bias = false;
};

/// Checks the layer chain: positive dims, consecutive dims agree, identity head.
inline void validate_layers(std::span<const LayerSpec> layers) {
    if (layers.empty()) throw ConfigError("network needs at least one layer");
    for (std::size_t k = 0; k < layers.size(); ++k) {
        if (layers[k].in_dim == 0 || layers[k].out_dim == 0)
            throw ConfigError("layer " + std::to_string(k) + " has a zero dimension");
        if (k + 1 < layers.size() && layers[k].out_dim != layers[k + 1].in_dim)
            throw ConfigError("layer " + std::to_string(k) + " out_dim " + std::to_string(layers[k].out_dim) +
                              " does not match layer " + std::to_string(k + 1) + " in_dim " +
                              std::to_string(layers[k + 1].in_dim));
    }
    if (layers.back().activation != Activation::identity)
        throw ConfigError("final layer must use the identity activation");
}

/// Default architecture: D -> hidden... -> N with ReLU between.
inline std::vector<LayerSpec> mlp_layers(std::size_t input_dim, std::span<const std::size_t> hidden,
                                         std::size_t classes) {
    std::vector<LayerSpec> out;
    std::size_t prev = input_dim;
    for (std::size_t h : hidden) {
        out.push_back({prev, h, Activation::relu});
        prev = h;
    }
    out.push_back({prev, classes, Activation::identity});
    return out;
}

inline ModelParams init_params(std::span<const LayerSpec> layers, std::uint64_t seed) {
    validate_layers(layers);
    Rng rng(seed);
    ModelParams p;
    p.seed = seed;
    for (const auto& spec : layers) {
        Layer l;
        l.spec = spec;
        const double scale = 1.0 / std::sqrt(static_cast<double>(spec.in_dim));
        l.weights.resize(spec.in_dim * spec.out_dim);
        for (double& w : l.weights) w = scale * rng.normal();
        l.bias.assign(spec.out_dim, 0.0);
        p.layers.push_back(std::move(l));
    }
    return p;
}

/// Structural and numeric consistency of a parameter set (used after loading).
inline void validate_params(const ModelParams& p) {
    std::vector<LayerSpec> specs;
    for (const auto& l : p.layers) specs.push_back(l.spec);
    validate_layers(specs);
    for (const auto& l : p.layers) {
        if (l.weights.size() != l.spec.in_dim * l.spec.out_dim || l.bias.size() != l.spec.out_dim)
            throw ConfigError("layer parameter sizes do not match its spec");
        if (!all_finite(l.weights) || !all_finite(l.bias)) throw ConfigError("non-finite model parameter");
    }
}

namespace detail {

inline void apply_layer(const Layer& l, std::span<const double> in, std::vector<double>& pre) {
    pre.resize(l.spec.out_dim);
    for (std::size_t r = 0; r < l.spec.out_dim; ++r) {
        const auto w = l.row(r);
        double acc = l.bias[r];
        for (std::size_t c = 0; c < l.spec.in_dim; ++c) acc += w[c] * in[c];
        pre[r] = acc;
    }
}

inline void check_input(const ModelParams& p, std::span<const double> x) {
    if (p.layers.empty()) throw StateError("model has no layers");
    if (x.size() != p.input_dim())
        throw InputError("input has length " + std::to_string(x.size()) + ", model expects " +
                         std::to_string(p.input_dim()));
}

// Activations of every layer: acts[0] = x, acts[k+1] = output of layer k.
// pre[k] holds layer k's pre-activation (needed for the ReLU mask).
struct Trace {
    std::vector<std::vector<double>> acts;
    std::vector<std::vector<double>> pre;

    const std::vector<double>& output() const { return acts.back(); }
};

inline Trace forward_trace(const ModelParams& p, std::span<const double> x) {
    check_input(p, x);
    Trace t;
    t.acts.reserve(p.layers.size() + 1);
    t.pre.resize(p.layers.size());
    t.acts.emplace_back(x.begin(), x.end());
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        const auto& l = p.layers[k];
        apply_layer(l, t.acts.back(), t.pre[k]);
        std::vector<double> a = t.pre[k];
        if (l.spec.activation == Activation::relu)
            for (double& v : a) v = v > 0.0 ? v : 0.0;
        t.acts.push_back(std::move(a));
    }
    return t;
}

// Reverse-mode pass: given dL/dz, returns dL/dx. When grads is non-null the
// parameter gradients are accumulated into it (same layout as the params).
inline std::vector<double> backward(const ModelParams& p, const Trace& t, std::vector<double> upstream,
                                    ModelParams* grads = nullptr) {
    for (std::size_t k = p.layers.size(); k-- > 0;) {
        const auto& l = p.layers[k];
        if (l.spec.activation == Activation::relu)
            for (std::size_t r = 0; r < upstream.size(); ++r)
                if (!(t.pre[k][r] > 0.0)) upstream[r] = 0.0;
        const auto& in = t.acts[k];
        if (grads) {
            auto& g = grads->layers[k];
            for (std::size_t r = 0; r < l.spec.out_dim; ++r) {
                const double u = upstream[r];
                if (u == 0.0) continue;
                g.bias[r] += u;
                double* gw = g.weights.data() + r * l.spec.in_dim;
                for (std::size_t c = 0; c < l.spec.in_dim; ++c) gw[c] += u * in[c];
            }
        }
        std::vector<double> down(l.spec.in_dim, 0.0);
        for (std::size_t r = 0; r < l.spec.out_dim; ++r) {
            const double u = upstream[r];
            if (u == 0.0) continue;
            const auto w = l.row(r);
            for (std::size_t c = 0; c < l.spec.in_dim; ++c) down[c] += u * w[c];
        }
        upstream = std::move(down);
    }
    return upstream;
}

inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams g = p;
    for (auto& l : g.layers) {
        std::fill(l.weights.begin(), l.weights.end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    return g;
}

} // namespace detail

/// Pre-softmax features z = f(x). Accepts raw vectors so scaled inputs
/// outside [0,1] can be evaluated.
inline FeatureVector forward(const ModelParams& p, std::span<const double> x) {
    detail::check_input(p, x);
    std::vector<double> cur(x.begin(), x.end()), next;
    for (const auto& l : p.layers) {
        detail::apply_layer(l, cur, next);
        if (l.spec.activation == Activation::relu)
            for (double& v : next) v = v > 0.0 ? v : 0.0;
        std::swap(cur, next);
    }
    return cur;
}

inline FeatureVector forward(const ModelParams& p, const Sample& x) { return forward(p, std::span<const double>(x.pixels)); }

inline ClassIndex predict(const ModelParams& p, std::span<const double> x) { return argmax(forward(p, x)); }
inline ClassIndex predict(const ModelParams& p, const Sample& x) { return predict(p, std::span<const double>(x.pixels)); }

/// d CE(softmax(z), label) / dx
inline std::vector<double> loss_grad_input(const ModelParams& p, std::span<const double> x, ClassIndex label) {
    auto t = detail::forward_trace(p, x);
    if (label >= p.num_classes()) throw InputError("label out of range");
    auto g = softmax(t.output());
    g[label] -= 1.0;
    return detail::backward(p, t, std::move(g));
}

/// d z_i / dx
inline std::vector<double> class_score_grad(const ModelParams& p, std::span<const double> x, ClassIndex i) {
    auto t = detail::forward_trace(p, x);
    if (i >= p.num_classes()) throw InputError("class index out of range");
    std::vector<double> e(p.num_classes(), 0.0);
    e[i] = 1.0;
    return detail::backward(p, t, std::move(e));
}

/// Features and the full Jacobian dz/dx (one row per class) from a single
/// forward pass.
struct Linearization {
    FeatureVector z;
    std::vector<std::vector<double>> grads;
};

inline Linearization linearize(const ModelParams& p, std::span<const double> x) {
    auto t = detail::forward_trace(p, x);
    Linearization lin;
    lin.z = t.output();
    lin.grads.reserve(p.num_classes());
    for (std::size_t i = 0; i < p.num_classes(); ++i) {
        std::vector<double> e(p.num_classes(), 0.0);
        e[i] = 1.0;
        lin.grads.push_back(detail::backward(p, t, std::move(e)));
    }
    return lin;
}

inline double mean_loss(const ModelParams& p, std::span<const Sample> data) {
    double s = 0.0;
    for (const auto& x : data) s += cross_entropy(forward(p, x), x.label.value());
    return s / static_cast<double>(data.size());
}

inline double accuracy(const ModelParams& p, std::span<const Sample> data) {
    if (data.empty()) throw InputError("accuracy of an empty dataset");
    std::size_t hit = 0;
    for (const auto& x : data)
        if (x.label && predict(p, x) == *x.label) ++hit;
    return static_cast<double>(hit) / static_cast<double>(data.size());
}

/// Mini-batch SGD on mean cross-entropy. Deterministic in (params, data order, cfg).
inline ModelParams train(ModelParams params, std::span<const Sample> data, const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (data.empty()) throw InputError("training set is empty");
    for (std::size_t n = 0; n < data.size(); ++n) {
        if (!data[n].label) throw InputError("training sample " + std::to_string(n) + " is unlabelled");
        if (*data[n].label >= params.num_classes())
            throw InputError("training sample " + std::to_string(n) + " has label out of range");
        if (data[n].pixels.size() != params.input_dim())
            throw InputError("training sample " + std::to_string(n) + " has wrong dimension");
    }

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const auto batch = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            auto grads = detail::zeros_like(params);
            for (std::size_t b = start; b < end; ++b) {
                const auto& s = data[order[b]];
                auto t = detail::forward_trace(params, s.pixels);
                auto g = softmax(t.output());
                g[*s.label] -= 1.0;
                detail::backward(params, t, std::move(g), &grads);
            }
            const double step = cfg.learning_rate / static_cast<double>(end - start);
            for (std::size_t k = 0; k < params.layers.size(); ++k) {
                auto& l = params.layers[k];
                const auto& g = grads.layers[k];
                for (std::size_t j = 0; j < l.weights.size(); ++j) l.weights[j] -= step * g.weights[j];
                if (!cfg.freeze_bias)
                    for (std::size_t j = 0; j < l.bias.size(); ++j) l.bias[j] -= step * g.bias[j];
            }
        }
    }
    return params;
}

inline bool is_bias_free(const ModelParams& p) {
    for (const auto& l : p.layers)
        for (double b : l.bias)
            if (b != 0.0) return false;
    return true;
}

// ---- persistence ----

inline nlohmann::json to_json(const ModelParams& p) {
    nlohmann::json j;
    j["layers"] = nlohmann::json::array();
    j["weights"] = nlohmann::json::array();
    j["biases"] = nlohmann::json::array();
    for (const auto& l : p.layers) {
        j["layers"].push_back({{"in", l.spec.in_dim}, {"out", l.spec.out_dim}, {"activation", to_string(l.spec.activation)}});
        j["weights"].push_back(l.weights);
        j["biases"].push_back(l.bias);
    }
    j["seed"] = p.seed;
    return j;
}

inline ModelParams model_from_json(const nlohmann::json& j) {
    ModelParams p;
    try {
        const auto& layers = j.at("layers");
        const auto& weights = j.at("weights");
        const auto& biases = j.at("biases");
        if (layers.size() != weights.size() || layers.size() != biases.size())
            throw FormatError("model JSON: layers/weights/biases lengths differ");
        for (std::size_t k = 0; k < layers.size(); ++k) {
            Layer l;
            l.spec.in_dim = layers[k].at("in").get<std::size_t>();
            l.spec.out_dim = layers[k].at("out").get<std::size_t>();
            l.spec.activation = parse_activation(layers[k].at("activation").get<std::string>());
            l.weights = weights[k].get<std::vector<double>>();
            l.bias = biases[k].get<std::vector<double>>();
            p.layers.push_back(std::move(l));
        }
        p.seed = j.at("seed").get<std::uint64_t>();
        validate_params(p);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model JSON: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("model JSON: ") + e.what());
    }
    return p;
}

namespace detail {

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("'" + path + "': " + e.what(), static_cast<long long>(e.byte));
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write '" + path + "'");
    out << text;
    if (!out) throw FormatError("write to '" + path + "' failed");
}

} // namespace detail

inline void save_model(const ModelParams& p, const std::string& path) {
    detail::write_text_file(path, to_json(p).dump() + "\n");
}

inline ModelParams load_model(const std::string& path) {
    try {
        return model_from_json(detail::read_json_file(path));
    } catch (const FormatError& e) {
        throw FormatError("'" + path + "': " + e.what());
    }
}

} // namespace densconf
