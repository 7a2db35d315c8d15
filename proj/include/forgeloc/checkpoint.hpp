#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "forgeloc/adam.hpp"
#include "forgeloc/network.hpp"

namespace forgeloc {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct OptimizerSnapshot {
    std::uint64_t step_count = 0;
    AdamOptions options;
    std::vector<std::vector<float>> first;
    std::vector<std::vector<float>> second;
};

/// Training bookkeeping needed to resume a run where it stopped.
struct ProgressSnapshot {
    std::uint64_t iteration = 0;
    std::uint64_t seed = 0;
    std::vector<float> losses;
    std::vector<float> epsilons;
};

/// In-memory form of a checkpoint file.
///
/// Layout (little endian): "FLCK", u32 version, model config as u32 fields,
/// u32 tensor count, a manifest of (u32 name length, name, 4 x u32 shape),
/// then every tensor's float32 data in manifest order. Optional tagged
/// sections follow ("ADAM", "PROG") and the file ends with "END!".
struct Checkpoint {
    ModelConfig config;
    std::vector<StoredTensor> tensors;  // parameters in declaration order, then "hpf.bank"
    std::optional<OptimizerSnapshot> optimizer;
    std::optional<ProgressSnapshot> progress;

    /// Snapshot of a model's parameters and kernel bank.
    static Checkpoint capture(const CoarseToFineModel<float>& model);

    /// Copies stored parameters into `model`. Names, order and shapes must match.
    void apply(CoarseToFineModel<float>& model) const;
};

OptimizerSnapshot capture_optimizer(const Adam<float>& adam);
void restore_optimizer(const OptimizerSnapshot& snapshot, Adam<float>& adam);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds a model from a checkpoint's config and loads its parameters.
CoarseToFineModel<float> load_model(const std::filesystem::path& path);

}  // namespace forgeloc
