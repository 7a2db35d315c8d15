#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "forgeloc/config.hpp"

using namespace forgeloc;
namespace fs = std::filesystem;

TEST(ConfigTest, ParsesKeysCommentsAndWhitespace) {
    const RunConfig cfg = parse_run_config(
        "# a comment\n"
        "\n"
        "seed = 42   # trailing comment\n"
        "nbf=8\n"
        "  height = 32\n"
        "width = 48\n"
        "sat = false\n"
        "attention = off\n"
        "refined_front = rgb\n"
        "eps_max = 0.005\n"
        "lr = 1e-3\n"
        "iterations = 12\n"
        "kinds = splice, removal\n"
        "perturbations = noise:15, clean\n"
        "output_dir = runs/a\n");
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_EQ(cfg.model.nbf, 8u);
    EXPECT_EQ(cfg.model.height, 32u);
    EXPECT_EQ(cfg.model.width, 48u);
    EXPECT_FALSE(cfg.training.sat);
    EXPECT_FALSE(cfg.model.attention);
    EXPECT_EQ(cfg.model.refined_front, FrontEnd::rgb);
    EXPECT_DOUBLE_EQ(cfg.training.eps_max, 0.005);
    EXPECT_DOUBLE_EQ(cfg.training.lr, 1e-3);
    EXPECT_EQ(cfg.training.iterations, 12u);
    ASSERT_EQ(cfg.kinds.size(), 2u);
    EXPECT_EQ(cfg.kinds[1], ForgeryKind::removal);
    ASSERT_EQ(cfg.perturbations.size(), 1u);
    EXPECT_EQ(cfg.perturbations[0].kind, Perturbation::Kind::gaussian_noise);
    EXPECT_EQ(cfg.output_dir, fs::path("runs/a"));
}

TEST(ConfigTest, DefaultsWhenEmpty) {
    const RunConfig cfg = parse_run_config("");
    EXPECT_EQ(cfg.seed, 0u);
    EXPECT_EQ(cfg.model.nbf, 32u);
    EXPECT_EQ(cfg.model.k, 16u);
    EXPECT_TRUE(cfg.training.sat);
    EXPECT_DOUBLE_EQ(cfg.training.eps_max, 0.01);
    EXPECT_EQ(cfg.kinds.size(), 3u);
    // the robustness rows used by eval
    ASSERT_EQ(cfg.perturbations.size(), 4u);
    EXPECT_EQ(cfg.perturbations[3].label(), "fgsm(eps=0.02)");
    EXPECT_NO_THROW(cfg.validate());
}

TEST(ConfigTest, UnknownKeysAndBadValuesRejected) {
    try {
        parse_run_config("seed = 1\nlearning_rate = 0.1\n", "run.cfg");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("run.cfg:2"), std::string::npos) << msg;
        EXPECT_NE(msg.find("learning_rate"), std::string::npos) << msg;
    }
    EXPECT_THROW(parse_run_config("nbf = -3"), ConfigError);
    EXPECT_THROW(parse_run_config("nbf = 3.5"), ConfigError);
    EXPECT_THROW(parse_run_config("sat = maybe"), ConfigError);
    EXPECT_THROW(parse_run_config("lr = fast"), ConfigError);
    EXPECT_THROW(parse_run_config("kinds = splice, blur"), ConfigError);
    EXPECT_THROW(parse_run_config("perturbations = blur:2"), ConfigError);
    EXPECT_THROW(parse_run_config("coarse_front = sobel"), ConfigError);
    EXPECT_THROW(parse_run_config("just words"), ConfigError);
    EXPECT_THROW(parse_run_config("seed = 99999999999999999999999"), ConfigError);
}

TEST(ConfigTest, ValidateCatchesBadCombinations) {
    RunConfig cfg = parse_run_config("eps_max = 0");
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = parse_run_config("nbf = 0");
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = parse_run_config("kinds = ");
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ConfigTest, ResolvedTextRoundTrips) {
    const RunConfig cfg = parse_run_config(
        "seed = 18446744073709551615\nnbf = 4\nlr = 0.0007\neps_max = 0.003\nperturbations = resize:0.25,blur:5\n"
        "kinds = copy_move\ncoarse_to_fine = false\n");
    const std::string text = cfg.to_text();
    const RunConfig back = parse_run_config(text);
    EXPECT_EQ(back.to_text(), text);
    EXPECT_EQ(back.seed, 18446744073709551615ull);
    EXPECT_DOUBLE_EQ(back.training.lr, 0.0007);
    // every key appears once
    for (const auto& key : RunConfig::keys()) {
        EXPECT_NE(text.find("\n" + key + " = "), std::string::npos) << key;
    }
}

TEST(ConfigTest, SubsystemSeedsDiffer) {
    RunConfig cfg;
    cfg.seed = 5;
    EXPECT_NE(cfg.model_seed(), cfg.training_seed());
    EXPECT_NE(cfg.training_seed(), cfg.data_seed());
    EXPECT_NE(cfg.data_seed(), cfg.eval_seed());
    RunConfig other = cfg;
    other.seed = 6;
    EXPECT_NE(cfg.model_seed(), other.model_seed());
    EXPECT_EQ(cfg.model_seed(), RunConfig{cfg}.model_seed());
}

TEST(ConfigTest, SeedEnvironmentOverride) {
    RunConfig cfg = parse_run_config("seed = 3");
    ::unsetenv("FORGELOC_SEED");
    apply_seed_override(cfg);
    EXPECT_EQ(cfg.seed, 3u);
    ::setenv("FORGELOC_SEED", "77", 1);
    apply_seed_override(cfg);
    EXPECT_EQ(cfg.seed, 77u);
    ::setenv("FORGELOC_SEED", "abc", 1);
    EXPECT_THROW(apply_seed_override(cfg), ConfigError);
    ::unsetenv("FORGELOC_SEED");
}

TEST(ConfigTest, LoadsFromFile) {
    const fs::path path = fs::temp_directory_path() / "forgeloc_config_test.cfg";
    std::ofstream(path) << "seed = 9\nnbf = 4\n";
    const RunConfig cfg = load_run_config(path);
    EXPECT_EQ(cfg.seed, 9u);
    fs::remove(path);
    EXPECT_THROW(load_run_config(path), ConfigError);
}
