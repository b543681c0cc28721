#pragma once

// Command-line front end. run_cli() is the whole program; tools/densconf.cpp
// only forwards argv to it so the tests can drive every subcommand in-process.
//
// Exit codes: 0 success, 1 usage error, 2 data or format error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "densconf/adversarial.hpp"
#include "densconf/confidence.hpp"
#include "densconf/data.hpp"
#include "densconf/distortions.hpp"
#include "densconf/error.hpp"
#include "densconf/experiments.hpp"
#include "densconf/netcore.hpp"

namespace densconf {

inline constexpr const char* kVersion = "1.0.0";

namespace cli_detail {

inline std::vector<double> parse_list(const std::string& text, std::string_view what) {
    std::vector<double> out;
    std::string_view rest = text;
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        out.push_back(parse_number(rest.substr(0, comma), what));
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
    if (out.empty()) throw ConfigError("empty " + std::string(what) + " list");
    return out;
}

inline void require_file(const std::string& path, const std::string& flag) {
    if (!std::filesystem::is_regular_file(path)) throw FormatError(flag + ": no such file '" + path + "'");
}

// Input images for score/distort/attack/pathology: an IDX image file, with
// optional IDX labels.
inline std::vector<Sample> load_inputs(const std::string& images, const std::string& labels) {
    require_file(images, "--input");
    auto imgs = read_idx_images(images);
    std::vector<ClassIndex> lab;
    if (!labels.empty()) {
        require_file(labels, "--labels");
        lab = read_idx_labels(labels);
        if (lab.size() != imgs.images.size())
            throw FormatError("'" + labels + "': label count differs from image count", 4);
    }
    std::vector<Sample> out;
    for (std::size_t n = 0; n < imgs.images.size(); ++n) {
        Sample s{std::move(imgs.images[n]), std::nullopt};
        if (!lab.empty()) s.label = lab[n];
        out.push_back(std::move(s));
    }
    return out;
}

inline const Sample& pick(const std::vector<Sample>& data, std::size_t index) {
    if (index >= data.size())
        throw InputError("--index " + std::to_string(index) + " out of range (" + std::to_string(data.size()) + " images)");
    return data[index];
}

inline std::vector<Sample> limited(std::vector<Sample> data, std::size_t limit) {
    if (limit && data.size() > limit) data.resize(limit);
    return data;
}

} // namespace cli_detail

/// Entry point shared by the binary and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Density-model confidence estimation for neural classifiers"};
    app.name("densconf");
    app.set_version_flag("--version", std::string("densconf ") + kVersion);
    app.require_subcommand(1);

    // Shared option storage; each subcommand binds only what it uses.
    std::string data_spec = "glyphs", data_dir = "data", out_path, model_path, density_path, input_path, labels_path;
    std::string config_path, distortion_text, attack_text = "deepfool", hidden_text = "128,64", ks_text = "1.3,2,5";
    std::string d_text = "1000";
    std::uint64_t seed = 0;
    int epochs = 10, batch = 32;
    double lr = 0.05, beta = 3.0;
    std::optional<double> variance_scale;
    std::optional<std::size_t> label;
    std::size_t index = 0, limit = 0, samples = 100000;
    bool no_bias = false;

    auto* train = app.add_subcommand("train", "Train the classifier with mini-batch SGD and write model JSON");
    train->add_option("--data", data_spec, "Dataset spec: mnist | idx:IMAGES,LABELS | glyphs[:N] | blobs:C:PER:DIM:SPREAD")
        ->capture_default_str();
    train->add_option("--data-dir", data_dir, "Directory holding MNIST IDX files")->capture_default_str();
    train->add_option("--out", out_path, "Output model JSON")->required();
    train->add_option("--seed", seed, "Seed for initialization, shuffling and synthetic data")->capture_default_str();
    train->add_option("--epochs", epochs, "Training epochs (>= 1)")->capture_default_str();
    train->add_option("--lr", lr, "Learning rate")->capture_default_str();
    train->add_option("--batch-size", batch, "Mini-batch size")->capture_default_str();
    train->add_option("--hidden", hidden_text, "Comma-separated hidden widths")->capture_default_str();
    train->add_option("--limit", limit, "Use only the first N training samples (0 = all)")->capture_default_str();
    train->add_flag("--no-bias", no_bias, "Keep all biases at zero (positively homogeneous network)");

    auto* fit = app.add_subcommand("fit-density", "Fit per-class diagonal Gaussians to training features");
    fit->add_option("--model", model_path, "Model JSON")->required();
    fit->add_option("--data", data_spec, "Dataset spec (training split is used)")->capture_default_str();
    fit->add_option("--data-dir", data_dir, "Directory holding MNIST IDX files")->capture_default_str();
    fit->add_option("--out", out_path, "Output density JSON")->required();
    fit->add_option("--seed", seed, "Seed for synthetic data")->capture_default_str();
    fit->add_option("--limit", limit, "Use only the first N training samples (0 = all)")->capture_default_str();
    fit->add_option("--variance-scale", variance_scale, "Covariance multiplier (default: feature dimension)");

    auto* score = app.add_subcommand("score", "Print the confidence report of one image as JSON");
    score->add_option("--model", model_path, "Model JSON")->required();
    score->add_option("--density", density_path, "Density JSON")->required();
    score->add_option("--input", input_path, "IDX image file")->required();
    score->add_option("--index", index, "Image index within the file")->capture_default_str();

    auto* distort = app.add_subcommand("distort", "Apply a distortion to IDX images; writes IDX, or PGM for .pgm output");
    distort->add_option("--input", input_path, "IDX image file")->required();
    distort->add_option("--distortion", distortion_text, "noise:SIGMA | blur:SIGMA | jpeg:QUALITY")->required();
    distort->add_option("--out", out_path, "Output IDX file, or .pgm for the single image at --index")->required();
    distort->add_option("--index", index, "Image written when the output is PGM")->capture_default_str();
    distort->add_option("--seed", seed, "Noise seed; image i uses seed + i")->capture_default_str();

    auto* attack = app.add_subcommand("attack", "Attack one image and write the result JSON");
    attack->add_option("--model", model_path, "Model JSON")->required();
    attack->add_option("--input", input_path, "IDX image file")->required();
    attack->add_option("--labels", labels_path, "IDX label file (true labels, needed by fgsm)");
    attack->add_option("--label", label, "True label of the image (overrides --labels)");
    attack->add_option("--index", index, "Image index within the file")->capture_default_str();
    attack->add_option("--attack", attack_text, "fgsm:EPS | deepfool[:OVERSHOOT[:MAX_ITER]]")->capture_default_str();
    attack->add_option("--out", out_path, "Output JSON (stdout when omitted)");

    auto* sweep_cmd = app.add_subcommand("sweep", "Run the distortion sweeps of an experiment config");
    sweep_cmd->add_option("--config", config_path, "Experiment config JSON")->required();

    auto* failures = app.add_subcommand("failures", "Count adversarial confidence failures for an experiment config");
    failures->add_option("--config", config_path, "Experiment config JSON")->required();

    auto* annulus = app.add_subcommand("annulus", "Monte Carlo norm concentration of unit Gaussians");
    annulus->add_option("--d", d_text, "Comma-separated dimensions")->capture_default_str();
    annulus->add_option("--beta", beta, "Annulus half-width")->capture_default_str();
    annulus->add_option("--samples", samples, "Draws per dimension")->capture_default_str();
    annulus->add_option("--seed", seed, "RNG seed")->capture_default_str();
    annulus->add_option("--out", out_path, "CSV output (stdout when omitted)");

    auto* pathology = app.add_subcommand("pathology", "Confidence of k * x for scale factors k > 1");
    pathology->add_option("--model", model_path, "Bias-free model JSON")->required();
    pathology->add_option("--density", density_path, "Density JSON")->required();
    pathology->add_option("--input", input_path, "IDX image file")->required();
    pathology->add_option("--index", index, "Image index within the file")->capture_default_str();
    pathology->add_option("--ks", ks_text, "Comma-separated scale factors, each > 1")->capture_default_str();
    pathology->add_option("--out", out_path, "CSV output (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*train) {
            std::vector<std::size_t> hidden;
            if (!hidden_text.empty())
                for (double h : cli_detail::parse_list(hidden_text, "hidden width")) {
                    if (h < 1 || h != std::floor(h)) throw ConfigError("hidden widths must be positive integers");
                    hidden.push_back(static_cast<std::size_t>(h));
                }
            TrainConfig cfg{lr, epochs, batch, seed, no_bias};
            if (!(cfg.learning_rate > 0.0) || cfg.epochs < 1 || cfg.batch_size < 1)
                throw ConfigError("need --lr > 0, --epochs >= 1, --batch-size >= 1");
            const auto data = cli_detail::limited(load_dataset(data_spec, Split::train, seed, data_dir), limit);
            if (data.empty()) throw InputError("training set is empty");
            std::size_t classes = 0;
            for (const auto& s : data) classes = std::max(classes, s.label.value_or(0) + 1);
            auto params = init_params(mlp_layers(data.front().pixels.size(), hidden, classes), seed);
            params = densconf::train(std::move(params), data, cfg);
            save_model(params, out_path);
            out << "trained " << params.layers.size() << " layers on " << data.size()
                << " samples, training accuracy " << format_number(accuracy(params, data)) << "\n";
        } else if (*fit) {
            cli_detail::require_file(model_path, "--model");
            const auto params = load_model(model_path);
            const auto data = cli_detail::limited(load_dataset(data_spec, Split::train, seed, data_dir), limit);
            const auto density = fit_densities(extract_features(params, data), variance_scale);
            save_density(density, out_path);
            out << "fitted " << density.num_classes() << " class densities, d = " << density.d
                << ", variance_scale = " << format_number(density.variance_scale) << "\n";
        } else if (*score) {
            cli_detail::require_file(model_path, "--model");
            cli_detail::require_file(density_path, "--density");
            const auto params = load_model(model_path);
            const auto density = load_density(density_path);
            const auto data = cli_detail::load_inputs(input_path, "");
            const auto report = density_confidence(density, forward(params, cli_detail::pick(data, index)));
            out << to_json(report).dump(2) << "\n";
        } else if (*distort) {
            const auto spec = parse_distortion(distortion_text, seed);
            const auto imgs = [&] {
                cli_detail::require_file(input_path, "--input");
                return read_idx_images(input_path);
            }();
            std::vector<Sample> data;
            for (std::size_t n = 0; n < imgs.images.size(); ++n) {
                DistortionSpec d = spec;
                d.seed = seed + n;
                ImageGrid img{imgs.cols, imgs.rows, imgs.images[n]};
                data.push_back({apply_distortion(img, d).pixels, std::nullopt});
            }
            if (std::filesystem::path(out_path).extension() == ".pgm")
                write_pgm(out_path, ImageGrid{imgs.cols, imgs.rows, cli_detail::pick(data, index).pixels});
            else
                write_idx_images(out_path, data, imgs.rows, imgs.cols);
            out << "wrote " << out_path << "\n";
        } else if (*attack) {
            const auto spec = parse_attack(attack_text);
            cli_detail::require_file(model_path, "--model");
            const auto params = load_model(model_path);
            auto sample = cli_detail::pick(cli_detail::load_inputs(input_path, labels_path), index);
            if (label) sample.label = *label;
            const auto result = run_attack(params, sample, spec);
            const auto text = to_json(result).dump(2) + "\n";
            if (out_path.empty())
                out << text;
            else
                detail::write_text_file(out_path, text);
        } else if (*sweep_cmd) {
            cli_detail::require_file(config_path, "--config");
            const auto cfg = load_experiment(config_path);
            if (cfg.distortions.empty()) throw ConfigError("config lists no distortions");
            for (const auto& path : run_sweeps(cfg)) out << "wrote " << path << "\n";
        } else if (*failures) {
            cli_detail::require_file(config_path, "--config");
            const auto cfg = load_experiment(config_path);
            const auto spec = parse_attack(cfg.attack.value_or("deepfool"));
            const auto params = load_model(cfg.model_path);
            const auto density = load_density(cfg.density_path);
            const auto data = evaluation_set(cfg);
            const auto fc = adversarial_failures(params, density, data, spec,
                                                 {cfg.include_unflipped, cfg.attack_limit, cfg.threads});
            std::filesystem::create_directories(cfg.out_dir);
            const auto path = (std::filesystem::path(cfg.out_dir) / "failures.csv").string();
            detail::write_text_file(path, failures_csv(fc));
            out << "attacked " << fc.n_attacked << ", flipped " << fc.n_flipped << ", compared " << fc.n_images
                << ", softmax fails " << fc.softmax_fails << ", density fails " << fc.density_fails << "\n"
                << "wrote " << path << "\n";
        } else if (*annulus) {
            std::vector<AnnulusStats> rows;
            for (double d : cli_detail::parse_list(d_text, "dimension")) {
                if (d < 1 || d != std::floor(d)) throw ConfigError("dimensions must be positive integers");
                rows.push_back(annulus_demo(static_cast<std::size_t>(d), beta, samples, seed));
            }
            const auto csv = annulus_csv(rows);
            if (out_path.empty())
                out << csv;
            else
                detail::write_text_file(out_path, csv);
        } else if (*pathology) {
            const auto ks = cli_detail::parse_list(ks_text, "scale factor");
            cli_detail::require_file(model_path, "--model");
            cli_detail::require_file(density_path, "--density");
            const auto params = load_model(model_path);
            const auto density = load_density(density_path);
            const auto data = cli_detail::load_inputs(input_path, "");
            const auto rows = scaling_pathology_demo(params, density, cli_detail::pick(data, index).pixels, ks);
            const auto csv = pathology_csv(rows);
            if (out_path.empty())
                out << csv;
            else
                detail::write_text_file(out_path, csv);
        }
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return 1;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

} // namespace densconf
