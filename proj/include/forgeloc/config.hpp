#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "forgeloc/data.hpp"
#include "forgeloc/metrics.hpp"
#include "forgeloc/network.hpp"
#include "forgeloc/training.hpp"

namespace forgeloc {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything a CLI run needs. Stored as `key = value` lines with `#`
/// comments; unknown keys are rejected.
struct RunConfig {
    ModelConfig model;
    SatConfig training;
    std::uint64_t seed = 0;

    std::filesystem::path manifest;
    std::filesystem::path output_dir = "out";
    std::filesystem::path base_dir;
    std::size_t train_count = 80;
    std::size_t test_count = 20;
    std::vector<ForgeryKind> kinds = {ForgeryKind::splice, ForgeryKind::copy_move, ForgeryKind::removal};
    std::vector<Perturbation> perturbations;
    std::size_t checkpoint_every = 0;  // 0: only at the end

    /// Sets one key from its textual value.
    void set(const std::string& key, const std::string& value);
    /// Every key with its current value, one per line, in a fixed order.
    std::string to_text() const;
    void validate() const;

    /// Seeds of the subsystems, derived from `seed` by fixed labels.
    std::uint64_t model_seed() const { return derive_seed(seed, "model"); }
    std::uint64_t training_seed() const { return derive_seed(seed, "training"); }
    std::uint64_t data_seed() const { return derive_seed(seed, "data"); }
    std::uint64_t eval_seed() const { return derive_seed(seed, "eval"); }

    static std::vector<std::string> keys();
};

RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies FORGELOC_SEED from the environment, if set.
void apply_seed_override(RunConfig& config);

std::vector<Perturbation> default_perturbations();

}  // namespace forgeloc
