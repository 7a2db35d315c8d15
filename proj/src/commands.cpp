#include "forgeloc/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include "forgeloc/checkpoint.hpp"

namespace forgeloc {

namespace fs = std::filesystem;

OutputGuard::~OutputGuard() {
    if (committed_) return;
    for (auto it = created_.rbegin(); it != created_.rend(); ++it) {
        std::error_code ec;
        fs::remove_all(*it, ec);
    }
}

const fs::path& OutputGuard::track(const fs::path& path) {
    if (!fs::exists(path)) created_.push_back(path);
    return path;
}

void OutputGuard::make_directories(const fs::path& dir) {
    if (dir.empty() || fs::exists(dir)) return;
    fs::path top = dir;
    while (top.has_parent_path() && !top.parent_path().empty() && !fs::exists(top.parent_path())) top = top.parent_path();
    fs::create_directories(dir);
    created_.push_back(top);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

fs::path sibling_config(const fs::path& output) {
    fs::path p = output;
    p.replace_extension();
    p += ".config.txt";
    return p;
}

std::string described_config(const std::string& command, const ModelConfig& model,
                             const std::vector<std::pair<std::string, std::string>>& extra) {
    RunConfig rc;
    rc.model = model;
    std::string text = "# command: " + command + "\n";
    for (const auto& [k, v] : extra) text += "# " + k + ": " + v + "\n";
    return text + rc.to_text();
}

Raster to_rgb(const Raster& r) {
    if (r.channels == 3) return r;
    if (r.channels != 1) throw IoError("expected a gray or RGB image");
    Raster out(3, r.height, r.width);
    for (std::size_t c = 0; c < 3; ++c) std::copy(r.data.begin(), r.data.end(), out.data.begin() + c * r.plane());
    return out;
}

// Reads an image and brings it to the model's input size.
Raster model_input(const fs::path& path, const ModelConfig& cfg, std::ostream& out, Raster* original = nullptr) {
    Raster img = to_rgb(read_png(path));
    if (original) *original = img;
    if (img.height != cfg.height || img.width != cfg.width) {
        out << "warning: " << path.string() << " is " << img.height << "x" << img.width << ", model expects "
            << cfg.height << "x" << cfg.width << "; resizing with area interpolation\n";
        img = resize_image(img, cfg.height, cfg.width);
    }
    return img;
}

}  // namespace

TrainPaths cmd_train(const RunConfig& config, const fs::path& resume, std::ostream& out) {
    config.validate();
    if (config.manifest.empty()) throw ConfigError("train: no manifest given");
    const Manifest manifest = read_manifest(config.manifest);
    std::vector<std::string> warnings;
    const auto data = load_examples(manifest, Split::train, config.model.height, config.model.width, &warnings);
    for (const auto& w : warnings) out << "warning: " << w << '\n';
    if (data.empty()) throw ConfigError("train: manifest " + config.manifest.string() + " has no train samples");

    CoarseToFineModel<float> model(config.model, config.model_seed());
    SatConfig sat = config.training;
    sat.seed = config.training_seed();
    Trainer trainer(model, sat);
    if (!resume.empty()) {
        const Checkpoint ck = load_checkpoint(resume);
        if (!(ck.config == config.model)) {
            throw ConfigError("train: checkpoint " + resume.string() + " was built with a different model config");
        }
        trainer.resume(ck);
        out << "resuming from iteration " << trainer.state().iteration << '\n';
    }

    OutputGuard guard;
    guard.make_directories(config.output_dir);
    TrainPaths paths{config.output_dir / "model.ckpt", config.output_dir / "train.log",
                     config.output_dir / "config.txt"};
    guard.track(paths.config);
    write_text(paths.config, config.to_text());
    guard.track(paths.log);
    std::ofstream log(paths.log, resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot open " + paths.log.string());
    guard.track(paths.checkpoint);

    const int last_phase = sat.sat ? 2 : 1;
    trainer.run(data, [&](const PhaseRecord& r) {
        const std::string line = format_log_line(r);
        log << line << '\n';
        log.flush();
        out << line << '\n';
        if (config.checkpoint_every && r.phase == last_phase && r.iteration % config.checkpoint_every == 0) {
            save_checkpoint(trainer.checkpoint(), paths.checkpoint);
        }
    });
    if (!log) throw IoError("write failed for " + paths.log.string());
    save_checkpoint(trainer.checkpoint(), paths.checkpoint);
    guard.commit();
    return paths;
}

void cmd_infer(const fs::path& checkpoint, const fs::path& image, const fs::path& mask_out,
               const fs::path& coarse_out, std::ostream& out) {
    const CoarseToFineModel<float> model = load_model(checkpoint);
    if (!coarse_out.empty() && !model.config().coarse_to_fine) {
        throw ConfigError("infer: --coarse needs a coarse-to-fine model");
    }
    Raster original;
    const Raster input = model_input(image, model.config(), out, &original);
    ModelOutput<float> pred;
    {
        NoGradScope<float> no_grad;
        pred = model.forward(raster_to_tensor(input));
    }
    const auto restore = [&](const Tensor<float>& t) {
        Raster m = tensor_to_raster(t);
        return original.same_size(m) ? m : resize_image(m, original.height, original.width);
    };
    OutputGuard guard;
    guard.make_directories(mask_out.parent_path());
    write_png(restore(pred.mask), guard.track(mask_out));
    if (!coarse_out.empty()) {
        guard.make_directories(coarse_out.parent_path());
        write_png(restore(pred.coarse_mask), guard.track(coarse_out));
    }
    const fs::path cfg = sibling_config(mask_out);
    guard.track(cfg);
    write_text(cfg, described_config("infer", model.config(),
                                     {{"checkpoint", checkpoint.string()}, {"image", image.string()}}));
    out << "wrote " << mask_out.string() << '\n';
    guard.commit();
}

MetricsReport cmd_eval(const fs::path& checkpoint, const RunConfig& config, Split split, const fs::path& report_path,
                       std::ostream& out) {
    if (config.manifest.empty()) throw ConfigError("eval: no manifest given");
    const CoarseToFineModel<float> model = load_model(checkpoint);
    const Manifest manifest = read_manifest(config.manifest);
    MetricsReport report = evaluate(model, manifest, split, config.perturbations, config.eval_seed());
    OutputGuard guard;
    guard.make_directories(report_path.parent_path());
    guard.track(report_path);
    write_text(report_path, report.format());
    RunConfig resolved = config;
    resolved.model = model.config();
    const fs::path cfg = sibling_config(report_path);
    guard.track(cfg);
    write_text(cfg, "# command: eval\n# checkpoint: " + checkpoint.string() + "\n# split: " + to_string(split) +
                        "\n" + resolved.to_text());
    out << report.format();
    guard.commit();
    return report;
}

AttackResult cmd_attack(const fs::path& checkpoint, const fs::path& image, const fs::path& mask, double eps,
                        const fs::path& out_dir, std::ostream& out) {
    if (!(eps > 0.0)) throw std::invalid_argument("attack: eps must be positive");
    const CoarseToFineModel<float> model = load_model(checkpoint);
    const ModelConfig& cfg = model.config();
    const Raster input = model_input(image, cfg, out);
    Raster gt = read_png(mask);
    if (gt.channels != 1) throw IoError(mask.string() + ": expected a gray mask");
    if (gt.height != cfg.height || gt.width != cfg.width) gt = resize_mask(gt, cfg.height, cfg.width);
    for (float& v : gt.data) v = v >= 0.5f ? 1.0f : 0.0f;

    const Tensor<float> x = raster_to_tensor(input);
    const Tensor<float> adv = fgsm(model, x, raster_to_tensor(gt), eps);
    Raster adv_r = tensor_to_raster(adv);
    Raster residual(3, cfg.height, cfg.width);
    AttackResult result;
    for (std::size_t i = 0; i < adv_r.data.size(); ++i) {
        const double d = static_cast<double>(adv_r.data[i]) - static_cast<double>(input.data[i]);
        result.linf = std::max(result.linf, std::abs(d));
        residual.data[i] = static_cast<float>(std::min(1.0, std::abs(d) * kResidualGain));
    }
    OutputGuard guard;
    guard.make_directories(out_dir);
    result.adversarial = out_dir / "adversarial.png";
    result.residual = out_dir / "residual.png";
    write_png(adv_r, guard.track(result.adversarial));
    write_png(residual, guard.track(result.residual));
    const fs::path cfg_path = out_dir / "attack.config.txt";
    guard.track(cfg_path);
    char eps_text[32];
    std::snprintf(eps_text, sizeof eps_text, "%.9g", eps);
    write_text(cfg_path, described_config("attack", cfg,
                                          {{"checkpoint", checkpoint.string()},
                                           {"image", image.string()},
                                           {"mask", mask.string()},
                                           {"eps", eps_text}}));
    char line[64];
    std::snprintf(line, sizeof line, "linf=%.9g\n", result.linf);
    out << line;
    guard.commit();
    return result;
}

Raster activation_map(const Tensor<float>& features) {
    const Shape s = features.shape();
    Raster map(1, s.h, s.w);
    const auto d = features.data();
    for (std::size_t c = 0; c < s.c; ++c) {
        for (std::size_t p = 0; p < s.h * s.w; ++p) map.data[p] += std::abs(d[c * s.h * s.w + p]);
    }
    for (float& v : map.data) v /= static_cast<float>(s.c);
    return map;
}

Raster colorize(const Raster& map) {
    const auto [lo, hi] = std::minmax_element(map.data.begin(), map.data.end());
    const float range = *hi - *lo;
    Raster out(3, map.height, map.width);
    for (std::size_t p = 0; p < map.plane(); ++p) {
        const float t = range > 0.0f ? (map.data[p] - *lo) / range : 0.0f;
        out.data[p] = t;
        out.data[map.plane() + p] = 0.0f;
        out.data[2 * map.plane() + p] = 1.0f - t;
    }
    return out;
}

Raster overlay(const Raster& image, const Raster& colors) {
    if (!image.same_size(colors) || image.channels != 3 || colors.channels != 3) {
        throw std::invalid_argument("overlay: image and colour map must both be RGB of equal size");
    }
    Raster out(3, image.height, image.width);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = 0.5f * image.data[i] + 0.5f * colors.data[i];
    return out;
}

std::vector<StageMap> cmd_visualize(const fs::path& checkpoint, const fs::path& image,
                                    const std::vector<std::string>& stages, const fs::path& out_dir,
                                    std::ostream& out) {
    const CoarseToFineModel<float> model = load_model(checkpoint);
    Raster original;
    const Raster input = model_input(image, model.config(), out, &original);
    ModelTrace<float> trace;
    {
        NoGradScope<float> no_grad;
        model.forward(raster_to_tensor(input), &trace);
    }
    std::vector<std::string> wanted = stages;
    if (wanted.empty()) {
        wanted = {"cwhpf"};
        if (model.config().attention) {
            wanted.push_back("sam");
            wanted.push_back("cam");
        }
    }
    OutputGuard guard;
    guard.make_directories(out_dir);
    std::vector<StageMap> maps;
    std::string report;
    for (const auto& stage : wanted) {
        Tensor<float> t;
        if (stage == "cwhpf") {
            t = trace.front_noise;
        } else if (stage == "sam") {
            t = trace.attention.spatial_term;
        } else if (stage == "cam") {
            t = trace.attention.channel_term;
        } else {
            throw std::invalid_argument("visualize: unknown stage '" + stage + "' (expected cwhpf, sam or cam)");
        }
        if (!t.defined()) throw std::invalid_argument("visualize: stage '" + stage + "' needs a model with attention");
        double mean = 0.0, sq = 0.0;
        for (float v : t.data()) mean += v;
        mean /= static_cast<double>(t.numel());
        for (float v : t.data()) sq += (v - mean) * (v - mean);
        StageMap m{stage, sq / static_cast<double>(t.numel()), out_dir / ("heatmap_" + stage + ".png")};
        Raster map = activation_map(t);
        if (!map.same_size(original)) map = resize_image(map, original.height, original.width);
        write_png(overlay(original, colorize(map)), guard.track(m.heatmap));
        char line[128];
        std::snprintf(line, sizeof line, "stage=%s variance=%.9g\n", stage.c_str(), m.variance);
        report += line;
        maps.push_back(m);
    }
    const fs::path variances = out_dir / "variances.txt";
    guard.track(variances);
    write_text(variances, report);
    const fs::path cfg = out_dir / "visualize.config.txt";
    guard.track(cfg);
    write_text(cfg, described_config("visualize", model.config(),
                                     {{"checkpoint", checkpoint.string()}, {"image", image.string()}}));
    out << report;
    guard.commit();
    return maps;
}

Manifest cmd_gen_data(const RunConfig& config, std::ostream& out) {
    config.validate();
    DatasetOptions options;
    options.train_count = config.train_count;
    options.test_count = config.test_count;
    options.height = config.model.height;
    options.width = config.model.width;
    options.seed = config.data_seed();
    options.kinds = config.kinds;
    options.base_dir = config.base_dir;
    OutputGuard guard;
    guard.make_directories(config.output_dir);
    guard.track(config.output_dir / "images");
    guard.track(config.output_dir / "masks");
    guard.track(config.output_dir / "manifest.tsv");
    const fs::path cfg = config.output_dir / "config.txt";
    guard.track(cfg);
    Manifest manifest = generate_dataset(options, config.output_dir);
    write_text(cfg, config.to_text());
    out << "wrote " << manifest.entries.size() << " samples to " << config.output_dir.string() << '\n';
    guard.commit();
    return manifest;
}

}  // namespace forgeloc
