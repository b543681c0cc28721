#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "densconf/cli.hpp"

using namespace densconf;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "densconf");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// One small model, density and image file shared by the suite.
class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / "densconf_cli_suite";
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        ASSERT_EQ(run({"train", "--data", "glyphs:300", "--hidden", "16", "--epochs", "3", "--seed", "1", "--out",
                       path("model.json")})
                      .code,
                  0);
        ASSERT_EQ(run({"fit-density", "--model", path("model.json"), "--data", "glyphs:300", "--seed", "1", "--out",
                       path("density.json")})
                      .code,
                  0);
        const auto imgs = make_glyphs(5, 77);
        write_idx_images(path("img.idx"), imgs, 28, 28);
        write_idx_labels(path("lab.idx"), imgs);
    }
    static void TearDownTestSuite() { fs::remove_all(dir_); }
    static std::string path(const std::string& name) { return (dir_ / name).string(); }

    static fs::path dir_;
};

fs::path CliTest::dir_;

} // namespace

TEST_F(CliTest, VersionAndHelp) {
    const auto v = run({"--version"});
    EXPECT_EQ(v.code, 0);
    EXPECT_NE(v.out.find("densconf 1.0.0"), std::string::npos);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, UsageErrorsExitOne) {
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"frobnicate"}).code, 1);
    EXPECT_EQ(run({"annulus", "--bogus"}).code, 1);
    EXPECT_EQ(run({"score", "--model", path("model.json")}).code, 1);
    EXPECT_EQ(run({"train", "--out", path("x.json"), "--epochs", "0"}).code, 1);
    EXPECT_EQ(run({"annulus", "--d", "1,abc"}).code, 1);
    EXPECT_EQ(run({"distort", "--input", path("img.idx"), "--distortion", "warp:2", "--out", path("x.idx")}).code, 1);
}

TEST_F(CliTest, DataErrorsExitTwo) {
    const auto missing = run({"score", "--model", path("nope.json"), "--density", path("density.json"), "--input",
                              path("img.idx")});
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.err.find("nope.json"), std::string::npos);
    EXPECT_EQ(run({"score", "--model", path("model.json"), "--density", path("density.json"), "--input",
                   path("lab.idx")})
                  .code,
              2);
    EXPECT_EQ(run({"score", "--model", path("model.json"), "--density", path("density.json"), "--input",
                   path("img.idx"), "--index", "99"})
                  .code,
              2);
    EXPECT_EQ(run({"fit-density", "--model", path("density.json"), "--out", path("d2.json")}).code, 2);
    EXPECT_EQ(run({"annulus", "--d", "4", "--beta", "3"}).code, 2);
}

TEST_F(CliTest, TrainIsDeterministic) {
    const std::vector<std::string> args{"train", "--data", "glyphs:300", "--hidden", "16", "--epochs", "3", "--seed", "1"};
    auto again = args;
    again.insert(again.end(), {"--out", path("model_again.json")});
    ASSERT_EQ(run(again).code, 0);
    EXPECT_EQ(slurp(path("model.json")), slurp(path("model_again.json")));
}

TEST_F(CliTest, ScorePrintsNormalisedPosterior) {
    const auto r = run({"score", "--model", path("model.json"), "--density", path("density.json"), "--input",
                        path("img.idx"), "--index", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    double total = 0.0;
    for (double p : j.at("posterior")) total += p;
    EXPECT_NEAR(total, 1.0, 1e-9);
    EXPECT_GT(j.at("softmax_conf").get<double>(), 0.0);
}

TEST_F(CliTest, DistortWritesIdxAndPgm) {
    const auto before = slurp(path("img.idx"));
    ASSERT_EQ(run({"distort", "--input", path("img.idx"), "--distortion", "noise:0.3", "--out", path("noisy.idx")}).code,
              0);
    const auto noisy = read_idx_images(path("noisy.idx"));
    EXPECT_EQ(noisy.images.size(), 5u);
    EXPECT_EQ(noisy.rows, 28u);
    ASSERT_EQ(run({"distort", "--input", path("img.idx"), "--distortion", "jpeg:30", "--out", path("one.pgm"), "--index",
                   "1"})
                  .code,
              0);
    EXPECT_EQ(slurp(path("one.pgm")).substr(0, 13), "P5\n28 28\n255\n");
    EXPECT_EQ(slurp(path("img.idx")), before);
}

TEST_F(CliTest, AttackWritesJson) {
    const auto r = run({"attack", "--model", path("model.json"), "--input", path("img.idx"), "--labels", path("lab.idx"),
                        "--attack", "fgsm:0.1", "--index", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_TRUE(j.contains("flipped"));
    ASSERT_EQ(run({"attack", "--model", path("model.json"), "--input", path("img.idx"), "--out", path("df.json")}).code,
              0);
    EXPECT_TRUE(nlohmann::json::parse(slurp(path("df.json"))).contains("perturbation_norm"));
    EXPECT_EQ(run({"attack", "--model", path("model.json"), "--input", path("img.idx"), "--attack", "fgsm:0.1"}).code, 2);
}

TEST_F(CliTest, SweepAndFailuresFromConfig) {
    const nlohmann::json cfg{{"model_path", path("model.json")},
                             {"density_path", path("density.json")},
                             {"dataset", "glyphs:40"},
                             {"distortions", {{{"kind", "noise"}, {"levels", {0, 0.5}}}, {{"kind", "blur"}, {"levels", {0, 1}}}}},
                             {"attack", "deepfool"},
                             {"out_dir", path("exp")},
                             {"attack_limit", 10}};
    std::ofstream(path("exp.json")) << cfg.dump();
    const auto s = run({"sweep", "--config", path("exp.json")});
    ASSERT_EQ(s.code, 0) << s.err;
    for (const char* f : {"sweep_noise.csv", "sweep_noise.svg", "sweep_blur.csv", "sweep_blur.svg"})
        EXPECT_TRUE(fs::exists(fs::path(path("exp")) / f)) << f;
    EXPECT_EQ(slurp(fs::path(path("exp")) / "sweep_noise.csv").substr(0, 5), "kind,");

    const auto f = run({"failures", "--config", path("exp.json")});
    ASSERT_EQ(f.code, 0) << f.err;
    EXPECT_EQ(slurp(fs::path(path("exp")) / "failures.csv").substr(0, 37), "n_images,softmax_fails,density_fails\n");

    std::ofstream(path("broken.json")) << "{\"model_path\": ";
    EXPECT_EQ(run({"sweep", "--config", path("broken.json")}).code, 2);
}

TEST_F(CliTest, AnnulusCsv) {
    const auto r = run({"annulus", "--d", "1,100", "--beta", "1", "--samples", "2000", "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "d,beta,n_samples,fraction_inside,mean_norm");
    EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 3);
}

TEST_F(CliTest, PathologyNeedsBiasFreeModel) {
    const std::vector<std::string> base{"pathology", "--density", path("density.json"), "--input", path("img.idx")};
    auto biased = base;
    biased.insert(biased.end(), {"--model", path("model.json")});
    EXPECT_EQ(run(biased).code, 2);

    ASSERT_EQ(run({"train", "--data", "glyphs:300", "--hidden", "16", "--epochs", "2", "--no-bias", "--out",
                   path("nobias.json")})
                  .code,
              0);
    ASSERT_EQ(run({"fit-density", "--model", path("nobias.json"), "--data", "glyphs:300", "--out", path("nobias_d.json")})
                  .code,
              0);
    const auto r = run({"pathology", "--model", path("nobias.json"), "--density", path("nobias_d.json"), "--input",
                        path("img.idx"), "--ks", "2,4"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 4);
    EXPECT_EQ(run({"pathology", "--model", path("nobias.json"), "--density", path("nobias_d.json"), "--input",
                   path("img.idx"), "--ks", "0.5"})
                  .code,
              2);
}
