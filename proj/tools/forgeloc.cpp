// Command-line front end: train, infer, eval, attack, visualize, gen-data.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

#include "forgeloc/commands.hpp"

namespace fl = forgeloc;
namespace fs = std::filesystem;

namespace {

// Options shared by the config-driven subcommands. Explicit flags win over
// FORGELOC_SEED, which wins over the config file.
struct ConfigFlags {
    std::string config_file;
    std::vector<std::string> sets;  // key=value
    std::optional<std::uint64_t> seed;
    std::optional<std::string> manifest, output_dir;
    std::optional<std::size_t> iterations, batch_size, nbf, k, height, width;
    std::optional<double> lr, eps_max;
    std::optional<std::string> coarse_front, refined_front;
    bool no_sat = false, no_attention = false, no_cwhpf = false, no_coarse_to_fine = false, flip_rotate = false;

    void add_common(CLI::App* app) {
        app->add_option("-c,--config", config_file, "key = value config file")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "override a config key (key=value), repeatable");
        app->add_option("--seed", seed, "random seed");
        app->add_option("-o,--output-dir", output_dir, "output directory");
        app->add_option("--height", height, "image height");
        app->add_option("--width", width, "image width");
    }

    void add_model(CLI::App* app) {
        app->add_option("-m,--manifest", manifest, "dataset manifest (tsv)");
        app->add_option("--iterations", iterations, "training iterations");
        app->add_option("--batch-size", batch_size, "mini-batch size");
        app->add_option("--nbf", nbf, "number of basic filters");
        app->add_option("--k", k, "feature-connection channels");
        app->add_option("--lr", lr, "Adam learning rate");
        app->add_option("--eps-max", eps_max, "upper end of the FGSM epsilon range");
        app->add_option("--coarse-front", coarse_front, "front end of the first net: rgb, hpf or cwhpf");
        app->add_option("--refined-front", refined_front, "front end of the refined net: rgb, hpf or cwhpf");
        app->add_flag("--no-sat", no_sat, "train without the adversarial second phase");
        app->add_flag("--no-attention", no_attention, "drop the forgery attention module");
        app->add_flag("--no-cwhpf", no_cwhpf, "use the channel-summing high-pass front end instead of CW-HPF");
        app->add_flag("--no-coarse-to-fine", no_coarse_to_fine, "single network predicting the mask directly");
        app->add_flag("--flip-rotate", flip_rotate, "random flips and quarter turns during training");
    }

    fl::RunConfig resolve() const {
        fl::RunConfig cfg = config_file.empty() ? fl::parse_run_config("") : fl::load_run_config(config_file);
        fl::apply_seed_override(cfg);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw fl::ConfigError("--set expects key=value, got '" + kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (seed) cfg.seed = *seed;
        if (manifest) cfg.manifest = *manifest;
        if (output_dir) cfg.output_dir = *output_dir;
        if (iterations) cfg.training.iterations = *iterations;
        if (batch_size) cfg.training.batch_size = *batch_size;
        if (nbf) cfg.model.nbf = *nbf;
        if (k) cfg.model.k = *k;
        if (height) cfg.model.height = *height;
        if (width) cfg.model.width = *width;
        if (lr) cfg.training.lr = *lr;
        if (eps_max) cfg.training.eps_max = *eps_max;
        if (coarse_front) cfg.model.coarse_front = fl::front_end_from_string(*coarse_front);
        if (refined_front) cfg.model.refined_front = fl::front_end_from_string(*refined_front);
        if (no_sat) cfg.training.sat = false;
        if (no_attention) cfg.model.attention = false;
        if (no_cwhpf) {
            cfg.model.coarse_front = fl::FrontEnd::hpf;
            cfg.model.refined_front = fl::FrontEnd::hpf;
        }
        if (no_coarse_to_fine) cfg.model.coarse_to_fine = false;
        if (flip_rotate) cfg.training.flip_rotate = true;
        cfg.validate();
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Image forgery localization: training, inference, evaluation, attack and visualization"};
    app.require_subcommand(1);

    ConfigFlags train_flags;
    std::string resume;
    auto* train = app.add_subcommand("train", "train a model on a manifest's train split");
    train_flags.add_common(train);
    train_flags.add_model(train);
    train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);
    train->add_option_function<std::size_t>(
        "--checkpoint-every", [&](std::size_t n) { train_flags.sets.push_back("checkpoint_every=" + std::to_string(n)); },
        "save the checkpoint every N iterations");

    std::string checkpoint, image, mask_out, coarse_out;
    bool with_coarse = false;
    auto* infer = app.add_subcommand("infer", "predict a tamper mask for one image");
    infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    infer->add_option("-i,--image", image, "input PNG")->required()->check(CLI::ExistingFile);
    infer->add_option("-o,--out", mask_out, "output mask PNG")->required();
    infer->add_flag("--coarse", with_coarse, "also write the coarse mask next to the output");

    ConfigFlags eval_flags;
    std::string eval_checkpoint, report_path = "report.txt", split_name = "test";
    std::vector<std::string> perturbations;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on clean and perturbed test images");
    eval_flags.add_common(eval);
    eval->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("-m,--manifest", eval_flags.manifest, "dataset manifest (tsv)");
    eval->add_option("--split", split_name, "train or test")->check(CLI::IsMember({"train", "test"}));
    eval->add_option("--perturb", perturbations, "perturbations, e.g. resize:0.5 blur:3 noise:15 fgsm:0.02");
    eval->add_option("--report", report_path, "report file");

    std::string attack_checkpoint, attack_image, attack_mask, attack_out = "attack";
    double eps = 0.02;
    auto* attack = app.add_subcommand("attack", "FGSM attack on one image");
    attack->add_option("--checkpoint", attack_checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    attack->add_option("-i,--image", attack_image, "input PNG")->required()->check(CLI::ExistingFile);
    attack->add_option("--mask", attack_mask, "ground-truth mask PNG")->required()->check(CLI::ExistingFile);
    attack->add_option("--eps", eps, "perturbation budget");
    attack->add_option("-o,--out-dir", attack_out, "output directory");

    std::string vis_checkpoint, vis_image, vis_out = "visualize";
    std::vector<std::string> stages;
    auto* visualize = app.add_subcommand("visualize", "activation heatmaps and feature variances");
    visualize->add_option("--checkpoint", vis_checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    visualize->add_option("-i,--image", vis_image, "input PNG")->required()->check(CLI::ExistingFile);
    visualize->add_option("--stage", stages, "cwhpf, sam, cam (default: all available)");
    visualize->add_option("-o,--out-dir", vis_out, "output directory");

    ConfigFlags gen_flags;
    std::optional<std::size_t> count, train_count, test_count;
    std::vector<std::string> kinds;
    std::string base_dir;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic forgery dataset");
    gen_flags.add_common(gen);
    gen->add_option("-n,--count", count, "total samples (a fifth go to the test split)");
    gen->add_option("--train", train_count, "train samples");
    gen->add_option("--test", test_count, "test samples");
    gen->add_option("--kinds", kinds, "splice, copy_move, removal");
    gen->add_option("--base-dir", base_dir, "folder of PNG scenes to forge instead of synthetic ones");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            fl::cmd_train(train_flags.resolve(), resume, std::cout);
        } else if (*infer) {
            fs::path coarse;
            if (with_coarse) {
                coarse = fs::path(mask_out).replace_extension();
                coarse += "_coarse.png";
            }
            fl::cmd_infer(checkpoint, image, mask_out, coarse, std::cout);
        } else if (*eval) {
            fl::RunConfig cfg = eval_flags.resolve();
            if (!perturbations.empty()) {
                cfg.perturbations.clear();
                for (const auto& p : perturbations) {
                    auto spec = fl::Perturbation::parse(p);
                    if (spec.kind != fl::Perturbation::Kind::none) cfg.perturbations.push_back(spec);
                }
            }
            fl::cmd_eval(eval_checkpoint, cfg, split_name == "train" ? fl::Split::train : fl::Split::test,
                         report_path, std::cout);
        } else if (*attack) {
            fl::cmd_attack(attack_checkpoint, attack_image, attack_mask, eps, attack_out, std::cout);
        } else if (*visualize) {
            fl::cmd_visualize(vis_checkpoint, vis_image, stages, vis_out, std::cout);
        } else if (*gen) {
            fl::RunConfig cfg = gen_flags.resolve();
            if (count) {
                cfg.test_count = *count / 5;
                cfg.train_count = *count - cfg.test_count;
            }
            if (train_count) cfg.train_count = *train_count;
            if (test_count) cfg.test_count = *test_count;
            if (!kinds.empty()) {
                cfg.kinds.clear();
                for (const auto& k : kinds) cfg.kinds.push_back(fl::forgery_kind_from_string(k));
            }
            if (!base_dir.empty()) cfg.base_dir = base_dir;
            fl::cmd_gen_data(cfg, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
