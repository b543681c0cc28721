// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "densconf/cli.hpp"
#include "densconf/densconf.hpp"
#include "oracles.hpp"

using namespace densconf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = o.pass;
    std::string detail = o.detail;
    if (limit_s > 0 && secs >= limit_s) {
        pass = false;
        detail += "; over time limit";
    }
    if (!pass) ++failures;
    std::printf("[%s] %2d %-28s %s (%.2f s%s)\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str(), secs,
                limit_s > 0 ? (" / limit " + format_number(limit_s) + " s").c_str() : "");
    std::fflush(stdout);
}

std::string fmt(double v) { return format_number(v); }

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelParams random_model(std::uint64_t seed, Rng& rng) {
    const std::size_t in = 3 + rng.below(10), h1 = 2 + rng.below(12), h2 = 2 + rng.below(8), out = 2 + rng.below(8);
    std::vector<LayerSpec> specs{{in, h1, Activation::relu}, {h1, h2, Activation::relu}, {h2, out, Activation::identity}};
    auto p = init_params(specs, seed);
    for (auto& l : p.layers)
        for (double& b : l.bias) b = rng.normal(0.0, 0.3);
    return p;
}

// Classifier and density shared by the digit-image criteria.
struct Pipeline {
    ModelParams params;
    DensityModel density;
    std::vector<Sample> test;
    double train_secs = 0.0;
};

const Pipeline& pipeline() {
    static const Pipeline pl = [] {
        const auto t0 = std::chrono::steady_clock::now();
        const auto train_set = load_dataset("glyphs", Split::train, 1);
        const std::vector<std::size_t> hidden{128, 64};
        auto p = init_params(mlp_layers(784, hidden, 10), 1);
        p = train(std::move(p), train_set, TrainConfig{0.05, 10, 32, 1, false});
        auto d = fit_densities(extract_features(p, train_set));
        Pipeline out{std::move(p), std::move(d), load_dataset("glyphs:1000", Split::test, 1), 0.0};
        out.train_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("       model: 784-128-64-10 on 6000 glyphs, test accuracy %s, trained in %.1f s\n",
                    fmt(accuracy(out.params, out.test)).c_str(), out.train_secs);
        return out;
    }();
    return pl;
}

Outcome lemma_sweep() {
    Rng rng(11);
    const std::size_t dims[] = {2, 10, 1000};
    std::size_t ok = 0, total = 0;
    while (total < 10000) {
        std::vector<double> z(dims[total % 3]);
        const double scale = std::pow(10.0, rng.uniform(-2.0, 3.0));
        for (double& v : z) v = rng.normal(0.0, scale);
        const auto top = argmax(z);
        bool unique = true;
        for (std::size_t i = 0; i < z.size(); ++i) unique = unique && (i == top || z[i] < z[top]);
        if (!unique) continue;
        const double k = 10.0 - 9.0 * rng.uniform(); // (1, 10]
        ok += verify_softmax_scaling(z, k) ? 1 : 0;
        ++total;
    }
    return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " cases hold"};
}

Outcome gradients() {
    Rng rng(12);
    double worst = 0.0;
    std::size_t compared = 0;
    for (std::uint64_t t = 0; t < 100; ++t) {
        const auto p = random_model(1000 + t, rng);
        std::vector<double> x(p.input_dim());
        for (double& v : x) v = rng.uniform();
        const std::size_t label = rng.below(p.num_classes());
        const auto c = oracle::check_gradient(p, x, loss_grad_input(p, x, label), [&](const std::vector<double>& v) {
            return oracle::naive_cross_entropy(oracle::naive_forward(p, v).z, label);
        });
        worst = std::max(worst, c.max_rel_error);
        compared += c.compared;
    }
    return {worst < 1e-4 && compared > 0, "max rel error " + fmt(worst) + " over " + std::to_string(compared) + " components"};
}

Outcome bayes_oracle() {
    Rng rng(13);
    std::vector<LabelledFeature> f;
    for (int k = 0; k < 10000; ++k) {
        if (rng.uniform() < 0.4)
            f.push_back({{rng.normal(-1.0, 1.0)}, 0});
        else
            f.push_back({{rng.normal(1.5, 0.8)}, 1});
    }
    const auto m = fit_densities(f);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const double x = -4.0 + 8.0 * k / 99.0;
        const double truth = oracle::true_posterior0(x, -1.0, 1.0, 0.4, 1.5, 0.8, 0.6);
        worst = std::max(worst, std::abs(density_posterior(m, std::vector<double>{x})[0] - truth));
    }
    return {worst < 0.02, "max abs error " + fmt(worst)};
}

Outcome normalization() {
    Rng rng(14);
    const std::size_t d = 10;
    std::vector<LabelledFeature> f;
    for (int n = 0; n < 500; ++n) {
        LabelledFeature lf{std::vector<double>(d), static_cast<ClassIndex>(n % 10)};
        for (std::size_t j = 0; j < d; ++j) lf.z[j] = rng.normal(j == lf.label ? 5.0 : 0.0, 1.0 + 0.1 * j);
        f.push_back(std::move(lf));
    }
    const auto m = fit_densities(f);
    double worst = 0.0;
    bool finite = true;
    for (int t = 0; t < 10000; ++t) {
        std::vector<double> z(d);
        for (double& v : z) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * std::pow(10.0, rng.uniform(-3.0, 6.0));
        const auto post = density_posterior(m, z);
        double sum = 0.0;
        for (double p : post) {
            finite = finite && std::isfinite(p);
            sum += p;
        }
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    return {finite && worst <= 1e-9, "max |sum - 1| " + fmt(worst) + (finite ? "" : ", non-finite entries")};
}

Outcome noise_sweep() {
    const auto& pl = pipeline();
    std::vector<double> levels;
    for (int i = 0; i <= 10; ++i) levels.push_back(i / 10.0);
    const auto rows = sweep(pl.params, pl.density, pl.test, DistortionKind::gaussian_noise, levels, 1);
    std::vector<double> dens;
    std::string series;
    for (const auto& r : rows) {
        dens.push_back(r.norm_density);
        series += (series.empty() ? "" : " ") + fmt(std::round(r.norm_density * 1000) / 1000);
    }
    const auto inv = count_inversions(dens, false);
    const bool shape = inv.count == 0 || (inv.count == 1 && inv.max_magnitude <= 0.02);
    const bool low = dens.back() < 0.5;
    return {shape && low, "norm density [" + series + "], inversions " + std::to_string(inv.count) + ", final " +
                              fmt(dens.back()) + (low ? "" : " (needs < 0.5)")};
}

Outcome jpeg_sweep() {
    const auto& pl = pipeline();
    const auto rows = sweep(pl.params, pl.density, pl.test, DistortionKind::jpeg, {20, 40, 60, 80, 100}, 1);
    std::vector<double> soft, dens;
    for (const auto& r : rows) {
        soft.push_back(r.norm_softmax);
        dens.push_back(r.norm_density);
    }
    // rows run from quality 100 down to 20, so a non-decreasing profile in
    // quality is non-increasing along the rows
    const auto is = count_inversions(soft, false), id = count_inversions(dens, false);
    auto ok = [](const Inversions& i) { return i.count == 0 || (i.count == 1 && i.max_magnitude <= 0.02); };
    return {ok(is) && ok(id), "softmax q20 " + fmt(soft.back()) + " (" + std::to_string(is.count) + " inv), density q20 " +
                                  fmt(dens.back()) + " (" + std::to_string(id.count) + " inv)"};
}

Outcome deepfool_failures() {
    const auto& pl = pipeline();
    const AttackSpec spec{AttackKind::deepfool, 0.0, 0.02, 50};
    const auto fc = adversarial_failures(pl.params, pl.density, pl.test, spec);
    const bool enough = fc.n_attacked >= 500;
    const bool flips = fc.flip_rate() >= 0.9;
    const bool fewer = fc.density_fails < fc.softmax_fails;
    return {enough && flips && fewer, "attacked " + std::to_string(fc.n_attacked) + ", flip rate " + fmt(fc.flip_rate()) +
                                          ", softmax fails " + std::to_string(fc.softmax_fails) + ", density fails " +
                                          std::to_string(fc.density_fails) + (fewer ? "" : " (needs density < softmax)")};
}

Outcome annulus() {
    const auto high = annulus_demo(1000, 3.0, 100000, 15);
    const auto one = annulus_demo(1, 1.0, 100000, 16);
    const double oracle_frac = oracle::normal_cdf(2.0) - oracle::normal_cdf(-2.0);
    const double gap = std::abs(one.fraction_inside - oracle_frac);
    return {high.fraction_inside >= 0.99 && gap <= 0.005,
            "d=1000 inside " + fmt(high.fraction_inside) + ", d=1 gap to oracle " + fmt(gap)};
}

Outcome affine_deepfool() {
    Rng rng(17);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + rng.below(50);
        std::vector<double> w(n), x(n);
        for (double& v : w) v = rng.normal();
        for (double& v : x) v = rng.uniform(0.2, 0.8);
        const double b = rng.normal(0.0, 0.5);
        ModelParams p;
        std::vector<double> weights = w;
        weights.insert(weights.end(), n, 0.0);
        p.layers.push_back({{n, 2, Activation::identity}, weights, {b, 0.0}});
        double f = b, w2 = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            f += w[k] * x[k];
            w2 += w[k] * w[k];
        }
        if (f == 0.0) continue;
        const auto r = deepfool(p, Sample{x, std::nullopt}, 0.0, 1);
        for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(r.raw_perturbation[k] + f / w2 * w[k]));
    }
    return {worst < 1e-8, "max deviation " + fmt(worst)};
}

Outcome determinism() {
    const auto root = fs::temp_directory_path() / "densconf_acceptance_determinism";
    fs::remove_all(root);
    std::vector<std::vector<std::string>> files;
    for (const char* run_name : {"a", "b"}) {
        const auto dir = root / run_name;
        fs::create_directories(dir);
        const auto model = (dir / "model.json").string(), density = (dir / "density.json").string();
        auto cli = [](std::vector<std::string> args) {
            args.insert(args.begin(), "densconf");
            std::vector<const char*> argv;
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
            if (code != 0) throw std::runtime_error("cli failed: " + err.str());
        };
        cli({"train", "--data", "glyphs:1000", "--hidden", "32", "--epochs", "2", "--seed", "5", "--out", model});
        cli({"fit-density", "--model", model, "--data", "glyphs:1000", "--seed", "5", "--out", density});
        const nlohmann::json cfg{{"model_path", model},
                                 {"density_path", density},
                                 {"dataset", "glyphs:200"},
                                 {"distortions",
                                  {{{"kind", "noise"}, {"levels", {0, 0.5, 1}}}, {{"kind", "jpeg"}, {"levels", {100, 20}}}}},
                                 {"seed", 5},
                                 {"threads", 2},
                                 {"out_dir", (dir / "out").string()}};
        std::ofstream((dir / "exp.json").string()) << cfg.dump(2);
        cli({"sweep", "--config", (dir / "exp.json").string()});
        files.push_back({slurp(model), slurp(density), slurp(dir / "out" / "sweep_noise.csv"),
                         slurp(dir / "out" / "sweep_jpeg.csv")});
    }
    fs::remove_all(root);
    bool same = true;
    for (std::size_t i = 0; i < files[0].size(); ++i) same = same && !files[0][i].empty() && files[0][i] == files[1][i];
    return {same, same ? "model, density and sweep CSVs byte-identical" : "outputs differ between runs"};
}

} // namespace

int main() {
    report(1, "softmax scaling lemma", 5, lemma_sweep);
    report(2, "input gradients", 30, gradients);
    report(3, "Bayes oracle", 5, bayes_oracle);
    report(4, "posterior normalization", 5, normalization);
    pipeline();
    report(5, "noise sweep", 120, noise_sweep);
    report(6, "JPEG monotonicity", 120, jpeg_sweep);
    report(7, "DeepFool failure counts", 300, deepfool_failures);
    report(8, "Gaussian annulus", 10, annulus);
    report(9, "affine DeepFool step", 1, affine_deepfool);
    report(10, "end-to-end determinism", 0, determinism);
    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
