#pragma once

// Evaluation protocols: distortion sweeps normalized to the clean level, the
// adversarial failure count, the Gaussian annulus Monte Carlo and the
// input-scaling pathology table. Also the CSV/SVG writers and the JSON
// experiment config.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "densconf/adversarial.hpp"
#include "densconf/confidence.hpp"
#include "densconf/data.hpp"
#include "densconf/distortions.hpp"
#include "densconf/error.hpp"
#include "densconf/netcore.hpp"
#include "densconf/rng.hpp"

namespace densconf {

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware
/// concurrency). fn must only write to slot i of its output.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

// ---- sweeps ----

struct SweepRow {
    DistortionKind kind = DistortionKind::gaussian_noise;
    double level = 0.0;
    std::size_t n = 0;
    double accuracy = 0.0;
    double mean_softmax = 0.0;
    double mean_density = 0.0;
    double norm_softmax = 0.0;
    double norm_density = 0.0;
};

inline double clean_level(DistortionKind kind) { return kind == DistortionKind::jpeg ? 100.0 : 0.0; }

/// Distorts every sample at each level and averages the softmax score and the
/// density posterior of the predicted (argmax z) class. Rows are normalized
/// by the clean row. JPEG levels are ordered by decreasing quality; noise and
/// blur levels by increasing strength. Sample i uses noise seed seed + i.
inline std::vector<SweepRow> sweep(const ModelParams& params, const DensityModel& density, std::span<const Sample> data,
                                   DistortionKind kind, std::vector<double> levels, std::uint64_t seed,
                                   unsigned threads = 1) {
    if (data.empty()) throw InputError("sweep needs at least one sample");
    if (levels.empty()) throw InputError("sweep needs at least one level");
    if (kind == DistortionKind::jpeg)
        std::sort(levels.begin(), levels.end(), std::greater<>());
    else
        std::sort(levels.begin(), levels.end());
    if (levels.front() != clean_level(kind))
        throw InputError("sweep levels must include the clean level " + std::to_string(clean_level(kind)));

    std::vector<SweepRow> rows;
    struct Score {
        double softmax, density;
        bool correct;
    };
    std::vector<Score> scores(data.size());
    for (double level : levels) {
        const DistortionSpec base{kind, level, 0};
        validate_distortion(base);
        parallel_for(data.size(), threads, [&](std::size_t i) {
            DistortionSpec d = base;
            d.seed = seed + i;
            const auto& s = data[i];
            const auto distorted = apply_distortion(s, d);
            const auto report = density_confidence(density, forward(params, distorted));
            scores[i] = {report.softmax_conf, report.density_conf(), s.label && *s.label == report.label};
        });
        SweepRow row;
        row.kind = kind;
        row.level = level;
        row.n = data.size();
        std::size_t hits = 0;
        for (const auto& sc : scores) {
            row.mean_softmax += sc.softmax;
            row.mean_density += sc.density;
            hits += sc.correct ? 1 : 0;
        }
        const auto n = static_cast<double>(data.size());
        row.mean_softmax /= n;
        row.mean_density /= n;
        row.accuracy = static_cast<double>(hits) / n;
        rows.push_back(row);
    }
    for (auto& r : rows) {
        r.norm_softmax = r.mean_softmax / rows.front().mean_softmax;
        r.norm_density = r.mean_density / rows.front().mean_density;
    }
    return rows;
}

/// Number of adjacent pairs where the series moves against the expected
/// direction, and the largest such move.
struct Inversions {
    std::size_t count = 0;
    double max_magnitude = 0.0;
};

inline Inversions count_inversions(std::span<const double> series, bool expect_increasing) {
    Inversions inv;
    for (std::size_t k = 1; k < series.size(); ++k) {
        const double step = series[k] - series[k - 1];
        const double wrong = expect_increasing ? -step : step;
        if (wrong > 0.0) {
            ++inv.count;
            inv.max_magnitude = std::max(inv.max_magnitude, wrong);
        }
    }
    return inv;
}

// ---- adversarial failure count ----

struct FailureCount {
    std::size_t n_images = 0; // images that entered the comparison
    std::size_t softmax_fails = 0;
    std::size_t density_fails = 0;
    std::size_t n_attacked = 0;
    std::size_t n_flipped = 0;

    double flip_rate() const { return n_attacked ? static_cast<double>(n_flipped) / static_cast<double>(n_attacked) : 0.0; }
};

struct FailureOptions {
    // Also compare attacked images whose label did not flip.
    bool include_unflipped = false;
    // Stop after this many correctly classified images were attacked (0 = all).
    std::size_t max_attacked = 0;
    unsigned threads = 1;
};

/// Attacks every correctly classified sample and counts, per confidence
/// measure, how often the adversarial image receives a higher confidence for
/// its predicted label than the clean image did for its own.
inline FailureCount adversarial_failures(const ModelParams& params, const DensityModel& density,
                                         std::span<const Sample> data, const AttackSpec& attack,
                                         const FailureOptions& opts = {}) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!data[i].label) throw InputError("sample " + std::to_string(i) + " is unlabelled");
        if (opts.max_attacked && eligible.size() >= opts.max_attacked) break;
        if (predict(params, data[i]) == *data[i].label) eligible.push_back(i);
    }

    struct Outcome {
        bool flipped, softmax_fail, density_fail;
    };
    std::vector<Outcome> outcomes(eligible.size());
    parallel_for(eligible.size(), opts.threads, [&](std::size_t k) {
        const auto& s = data[eligible[k]];
        const auto adv = run_attack(params, s, attack);
        const auto clean = density_confidence(density, forward(params, s));
        const auto dirty = density_confidence(density, forward(params, adv.perturbed));
        outcomes[k] = {adv.flipped, dirty.softmax_conf > clean.softmax_conf, dirty.density_conf() > clean.density_conf()};
    });

    FailureCount fc;
    fc.n_attacked = eligible.size();
    for (const auto& o : outcomes) {
        fc.n_flipped += o.flipped ? 1 : 0;
        if (!o.flipped && !opts.include_unflipped) continue;
        ++fc.n_images;
        fc.softmax_fails += o.softmax_fail ? 1 : 0;
        fc.density_fails += o.density_fail ? 1 : 0;
    }
    if (fc.n_images == 0) throw InputError("no adversarial images to compare (empty eligible set)");
    return fc;
}

// ---- Gaussian annulus ----

struct AnnulusStats {
    std::size_t d = 0;
    double beta = 0.0;
    std::size_t n_samples = 0;
    double fraction_inside = 0.0;
    double mean_norm = 0.0;
};

/// Fraction of draws from the d-dimensional unit Gaussian whose norm lies in
/// [sqrt(d) - beta, sqrt(d) + beta].
inline AnnulusStats annulus_demo(std::size_t d, double beta, std::size_t n_samples, std::uint64_t seed) {
    if (d < 1) throw InputError("annulus dimension must be >= 1");
    if (n_samples < 1) throw InputError("annulus needs at least one sample");
    const double root = std::sqrt(static_cast<double>(d));
    if (!(beta >= 0.0) || beta > root) throw InputError("beta must lie in [0, sqrt(d)]");
    Rng rng(seed);
    std::size_t inside = 0;
    double norm_sum = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double x = rng.normal();
            sq += x * x;
        }
        const double norm = std::sqrt(sq);
        norm_sum += norm;
        if (norm >= root - beta && norm <= root + beta) ++inside;
    }
    return {d, beta, n_samples, static_cast<double>(inside) / static_cast<double>(n_samples),
            norm_sum / static_cast<double>(n_samples)};
}

// ---- scaling pathology ----

struct PathologyRow {
    double k = 1.0;
    ClassIndex label = 0;
    double softmax_conf = 0.0;
    double density_posterior = 0.0;
    // Softmax score strictly above the previous row. False only when the two
    // values are indistinguishable in double precision.
    bool resolved = true;
};

/// Scores k * x for the original input (k = 1, first row) and each k in ks
/// (sorted ascending). Requires a bias-free network so that scaling the input
/// scales the features.
inline std::vector<PathologyRow> scaling_pathology_demo(const ModelParams& params, const DensityModel& density,
                                                        std::span<const double> x, std::vector<double> ks) {
    if (ks.empty()) throw InputError("need at least one scale factor");
    for (double k : ks)
        if (!(k > 1.0) || !std::isfinite(k)) throw InputError("scale factors must be finite and > 1");
    if (!is_bias_free(params)) throw InputError("scaling demo needs a bias-free model (train with frozen biases)");
    std::sort(ks.begin(), ks.end());
    ks.insert(ks.begin(), 1.0);

    std::vector<PathologyRow> rows;
    for (double k : ks) {
        std::vector<double> scaled(x.begin(), x.end());
        for (double& v : scaled) v *= k;
        const auto report = density_confidence(density, forward(params, scaled));
        PathologyRow row{k, report.label, report.softmax_conf, report.density_conf(), true};
        if (!rows.empty()) row.resolved = row.softmax_conf > rows.back().softmax_conf;
        rows.push_back(row);
    }
    return rows;
}

// ---- output ----

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline std::string sweep_csv(std::span<const SweepRow> rows) {
    std::string out = "kind,level,n,accuracy,mean_softmax,mean_density,norm_softmax,norm_density\n";
    for (const auto& r : rows) {
        out += std::string(to_string(r.kind)) + "," + format_number(r.level) + "," + std::to_string(r.n) + "," +
               format_number(r.accuracy) + "," + format_number(r.mean_softmax) + "," + format_number(r.mean_density) +
               "," + format_number(r.norm_softmax) + "," + format_number(r.norm_density) + "\n";
    }
    return out;
}

inline std::string failures_csv(const FailureCount& f) {
    return "n_images,softmax_fails,density_fails\n" + std::to_string(f.n_images) + "," + std::to_string(f.softmax_fails) +
           "," + std::to_string(f.density_fails) + "\n";
}

inline std::string annulus_csv(std::span<const AnnulusStats> rows) {
    std::string out = "d,beta,n_samples,fraction_inside,mean_norm\n";
    for (const auto& a : rows)
        out += std::to_string(a.d) + "," + format_number(a.beta) + "," + std::to_string(a.n_samples) + "," +
               format_number(a.fraction_inside) + "," + format_number(a.mean_norm) + "\n";
    return out;
}

inline std::string pathology_csv(std::span<const PathologyRow> rows) {
    std::string out = "k,label,softmax_conf,density_posterior,resolved\n";
    for (const auto& r : rows)
        out += format_number(r.k) + "," + std::to_string(r.label) + "," + format_number(r.softmax_conf) + "," +
               format_number(r.density_posterior) + "," + (r.resolved ? "1" : "0") + "\n";
    return out;
}

struct PlotSeries {
    std::string name;
    std::string color;
    std::vector<double> y;
};

/// Minimal SVG line chart; x values shared by every series.
inline std::string svg_line_plot(const std::string& title, const std::string& x_label, std::span<const double> x,
                                 std::span<const PlotSeries> series) {
    constexpr double W = 640, H = 420, L = 70, R = 20, T = 40, B = 60;
    double x_lo = *std::min_element(x.begin(), x.end()), x_hi = *std::max_element(x.begin(), x.end());
    if (x_hi == x_lo) x_hi = x_lo + 1.0;
    double y_lo = 0.0, y_hi = 1.0;
    for (const auto& s : series)
        for (double v : s.y) {
            y_lo = std::min(y_lo, v);
            y_hi = std::max(y_hi, v);
        }
    auto px = [&](double v) { return L + (v - x_lo) / (x_hi - x_lo) * (W - L - R); };
    auto py = [&](double v) { return H - B - (v - y_lo) / (y_hi - y_lo) * (H - T - B); };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" + title + "</text>\n";
    svg += "<line x1=\"" + format_number(L) + "\" y1=\"" + format_number(H - B) + "\" x2=\"" + format_number(W - R) +
           "\" y2=\"" + format_number(H - B) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + format_number(L) + "\" y1=\"" + format_number(T) + "\" x2=\"" + format_number(L) + "\" y2=\"" +
           format_number(H - B) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double yv = y_lo + (y_hi - y_lo) * t / 4.0;
        svg += "<text x=\"" + format_number(L - 8) + "\" y=\"" + format_number(py(yv) + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + format_number(std::round(yv * 100) / 100) +
               "</text>\n";
    }
    for (double xv : x)
        svg += "<text x=\"" + format_number(px(xv)) + "\" y=\"" + format_number(H - B + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + format_number(xv) + "</text>\n";
    svg += "<text x=\"320\" y=\"" + format_number(H - 15) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + x_label + "</text>\n";
    svg += "<text x=\"18\" y=\"" + format_number((H - B + T) / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 " +
           format_number((H - B + T) / 2) + ")\">normalized confidence</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        std::string pts;
        for (std::size_t k = 0; k < x.size() && k < series[s].y.size(); ++k)
            pts += format_number(px(x[k])) + "," + format_number(py(series[s].y[k])) + " ";
        svg += "<polyline fill=\"none\" stroke=\"" + series[s].color + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        const double ly = T + 14.0 + 16.0 * static_cast<double>(s);
        svg += "<line x1=\"" + format_number(W - R - 130) + "\" y1=\"" + format_number(ly) + "\" x2=\"" +
               format_number(W - R - 110) + "\" y2=\"" + format_number(ly) + "\" stroke=\"" + series[s].color +
               "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + format_number(W - R - 104) + "\" y=\"" + format_number(ly + 4) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + series[s].name + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

inline std::string sweep_svg(std::span<const SweepRow> rows) {
    if (rows.empty()) throw InputError("no sweep rows to plot");
    std::vector<double> x;
    PlotSeries soft{"softmax", "#d62728", {}}, dens{"density", "#1f77b4", {}};
    for (const auto& r : rows) {
        x.push_back(r.level);
        soft.y.push_back(r.norm_softmax);
        dens.y.push_back(r.norm_density);
    }
    const std::vector<PlotSeries> series{soft, dens};
    const std::string kind(to_string(rows.front().kind));
    const std::string x_label = rows.front().kind == DistortionKind::jpeg ? "JPEG quality" : kind + " sigma";
    return svg_line_plot("Confidence under " + kind, x_label, x, series);
}

// ---- experiment config ----

struct SweepPlan {
    DistortionKind kind = DistortionKind::gaussian_noise;
    std::vector<double> levels;
};

struct ExperimentConfig {
    std::string model_path;
    std::string density_path;
    std::string dataset = "glyphs";
    std::string data_dir = "data";
    std::vector<SweepPlan> distortions;
    std::optional<std::string> attack;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::size_t limit = 0;        // evaluation samples (0 = whole test split)
    std::size_t attack_limit = 0; // attacked images (0 = all eligible)
    bool include_unflipped = false;
    unsigned threads = 1;
};

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        c.model_path = j.at("model_path").get<std::string>();
        c.density_path = j.at("density_path").get<std::string>();
        c.dataset = j.value("dataset", c.dataset);
        c.data_dir = j.value("data_dir", c.data_dir);
        if (j.contains("distortions"))
            for (const auto& d : j.at("distortions"))
                c.distortions.push_back({parse_distortion_kind(d.at("kind").get<std::string>()),
                                         d.at("levels").get<std::vector<double>>()});
        if (j.contains("attack") && !j.at("attack").is_null()) c.attack = j.at("attack").get<std::string>();
        c.seed = j.value("seed", std::uint64_t{0});
        c.out_dir = j.value("out_dir", c.out_dir);
        c.limit = j.value("limit", std::size_t{0});
        c.attack_limit = j.value("attack_limit", std::size_t{0});
        c.include_unflipped = j.value("include_unflipped", false);
        c.threads = j.value("threads", 1u);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("experiment config: ") + e.what());
    }
    return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
    try {
        return experiment_from_json(detail::read_json_file(path));
    } catch (const FormatError& e) {
        throw FormatError("'" + path + "': " + e.what());
    }
}

/// Evaluation split of the configured dataset, truncated to cfg.limit.
inline std::vector<Sample> evaluation_set(const ExperimentConfig& cfg) {
    auto data = load_dataset(cfg.dataset, Split::test, cfg.seed, cfg.data_dir);
    if (cfg.limit && data.size() > cfg.limit) data.resize(cfg.limit);
    return data;
}

/// Runs every configured sweep, writing <out_dir>/sweep_<kind>.csv and .svg.
/// Returns the written paths.
inline std::vector<std::string> run_sweeps(const ExperimentConfig& cfg) {
    const auto params = load_model(cfg.model_path);
    const auto density = load_density(cfg.density_path);
    const auto data = evaluation_set(cfg);
    std::filesystem::create_directories(cfg.out_dir);
    std::vector<std::string> written;
    for (const auto& plan : cfg.distortions) {
        const auto rows = sweep(params, density, data, plan.kind, plan.levels, cfg.seed, cfg.threads);
        const auto stem = (std::filesystem::path(cfg.out_dir) / ("sweep_" + std::string(to_string(plan.kind)))).string();
        detail::write_text_file(stem + ".csv", sweep_csv(rows));
        detail::write_text_file(stem + ".svg", sweep_svg(rows));
        written.push_back(stem + ".csv");
        written.push_back(stem + ".svg");
    }
    return written;
}

} // namespace densconf
