#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "forgeloc/config.hpp"

namespace forgeloc {

/// Removes the files it tracks unless commit() is called, so a failed
/// command leaves no partial outputs behind. Paths that already existed
/// when tracked are left alone.
class OutputGuard {
public:
    OutputGuard() = default;
    ~OutputGuard();
    OutputGuard(const OutputGuard&) = delete;
    OutputGuard& operator=(const OutputGuard&) = delete;

    const std::filesystem::path& track(const std::filesystem::path& path);
    /// Creates `dir` (and parents) and tracks every directory it had to create.
    void make_directories(const std::filesystem::path& dir);
    void commit() { committed_ = true; }

private:
    std::vector<std::filesystem::path> created_;
    bool committed_ = false;
};

struct TrainPaths {
    std::filesystem::path checkpoint;
    std::filesystem::path log;
    std::filesystem::path config;
};

/// Trains on the manifest's train split and writes model.ckpt, train.log and
/// config.txt into the output directory. With `resume`, training continues
/// from that checkpoint and the log is appended to.
TrainPaths cmd_train(const RunConfig& config, const std::filesystem::path& resume, std::ostream& out);

/// Writes the final mask (and optionally the coarse mask) as 8-bit gray PNG
/// at the input image's size.
void cmd_infer(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
               const std::filesystem::path& mask_out, const std::filesystem::path& coarse_out, std::ostream& out);

/// Evaluates a checkpoint on a manifest split and writes the report table.
MetricsReport cmd_eval(const std::filesystem::path& checkpoint, const RunConfig& config, Split split,
                       const std::filesystem::path& report_path, std::ostream& out);

struct AttackResult {
    double linf = 0.0;
    std::filesystem::path adversarial;
    std::filesystem::path residual;
};

inline constexpr double kResidualGain = 20.0;

/// FGSM attack on one image; writes adversarial.png and residual.png (the
/// absolute perturbation times 20, clipped) into `out_dir`.
AttackResult cmd_attack(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                        const std::filesystem::path& mask, double eps, const std::filesystem::path& out_dir,
                        std::ostream& out);

struct StageMap {
    std::string stage;
    double variance = 0.0;
    std::filesystem::path heatmap;
};

/// Stages: "cwhpf" (front-end noise features), "sam" (spatial-attention
/// weighted features), "cam" (channel-attention weighted features).
std::vector<StageMap> cmd_visualize(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                                    const std::vector<std::string>& stages, const std::filesystem::path& out_dir,
                                    std::ostream& out);

/// Generates the synthetic dataset described by the config into its output directory.
Manifest cmd_gen_data(const RunConfig& config, std::ostream& out);

/// Per-pixel mean of |x| over channels of sample 0, as a one-channel raster.
Raster activation_map(const Tensor<float>& features);
/// Linear blue-to-red colouring over the map's own [min, max]; a flat map is
/// all blue.
Raster colorize(const Raster& map);
/// 50% blend of a colour map over an RGB image of the same size.
Raster overlay(const Raster& image, const Raster& colors);

}  // namespace forgeloc
