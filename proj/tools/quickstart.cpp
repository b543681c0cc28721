// Train a small classifier on procedural digits, fit the class densities and
// compare both confidence measures on a clean and a noisy image.

#include <cstdio>

#include "densconf/densconf.hpp"

int main() {
    using namespace densconf;

    const auto train_set = make_glyphs(2000, 1);
    const auto test_set = make_glyphs(10, 2);

    const std::vector<std::size_t> hidden{64};
    auto params = init_params(mlp_layers(kGlyphSide * kGlyphSide, hidden, 10), 0);
    params = train(std::move(params), train_set, TrainConfig{0.05, 5, 32, 0, false});
    const auto density = fit_densities(extract_features(params, train_set));

    std::printf("test accuracy %.3f\n", accuracy(params, test_set));
    for (double sigma : {0.0, 0.3, 0.8}) {
        const auto noisy = apply_distortion(test_set[3], DistortionSpec{DistortionKind::gaussian_noise, sigma, 7});
        const auto report = density_confidence(density, forward(params, noisy));
        std::printf("noise %.1f: label %zu softmax %.3f density %.3f\n", sigma, report.label, report.softmax_conf,
                    report.density_conf());
    }
}
