#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "forgeloc/adam.hpp"
#include "forgeloc/checkpoint.hpp"
#include "forgeloc/network.hpp"

namespace forgeloc {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SatConfig {
    double eps_max = 0.01;
    double lr = 0.002;
    std::size_t iterations = 100;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    bool sat = true;
    bool flip_rotate = false;

    void validate() const;
};

/// One image/mask pair: image [1, C, h, w] in [0, 1], mask [1, 1, h, w] binary.
struct Example {
    Tensor<float> image;
    Tensor<float> mask;
};

/// Sum of the BCE of the coarse mask (if defined) and of the final mask.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& gt, const Tensor<T>& coarse, const Tensor<T>& refined);

/// Forward pass plus total_loss.
template <typename T>
Tensor<T> model_loss(const CoarseToFineModel<T>& model, const Tensor<T>& image, const Tensor<T>& gt);

/// Draws from (0, eps_max]: eps_max * (1 - u) with u ~ U[0, 1).
double sample_epsilon(Rng& rng, double eps_max);

/// Fast gradient sign step against the model's current parameters:
/// clip_[0,1](image + eps_i * sign(d loss / d image)) with eps_i per sample
/// (`eps` has one entry, or one per batch element). A pixel whose rounded
/// sum would land past eps_i is moved back by one ulp, so |adv - image| never
/// exceeds eps_i. Parameters and their gradients are left untouched.
template <typename T>
Tensor<T> fgsm(const CoarseToFineModel<T>& model, const Tensor<T>& image, const Tensor<T>& gt,
               std::span<const double> eps);

template <typename T>
Tensor<T> fgsm(const CoarseToFineModel<T>& model, const Tensor<T>& image, const Tensor<T>& gt, double eps) {
    const double e[1] = {eps};
    return fgsm(model, image, gt, std::span<const double>(e, 1));
}

/// Dihedral transforms applied identically to every channel of a [n, c, h, w]
/// tensor.
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x);
template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& x);
/// Quarter turns counter-clockwise; odd turns swap h and w.
template <typename T>
Tensor<T> rotate90(const Tensor<T>& x, int quarter_turns = 1);

/// Random flip/rotation of an example. Odd quarter turns are only drawn for
/// square images so batch shapes stay uniform.
Example augment(const Example& sample, Rng& rng);

/// Stacks examples into a batch [n, C, h, w] / [n, 1, h, w].
Example stack(std::span<const Example> samples);

struct TrainState {
    std::uint64_t iteration = 0;   // completed iterations
    std::vector<float> losses;     // one entry per phase, in order
    std::vector<float> epsilons;   // one entry (batch mean) per phase-2 step
};

struct PhaseRecord {
    std::uint64_t iteration;  // 1-based
    int phase;
    double epsilon;  // batch mean; negative for phase 1
    float loss;
};

/// Formats `iter=<n> phase=<1|2> eps=<e|-> loss=<l>`.
std::string format_log_line(const PhaseRecord& record);

/// Two-phase self-adversarial training of one model on an in-memory set.
///
/// Each iteration: a normal Adam step on a batch, then (with SAT) an FGSM
/// copy of the same batch built against the updated parameters and a second
/// Adam step on it with the same masks. Batches follow a seeded per-epoch
/// permutation, so a resumed run replays the same sequence.
class Trainer {
public:
    Trainer(CoarseToFineModel<float>& model, SatConfig config);

    /// Runs until `config.iterations` iterations are complete. `on_phase`
    /// is called after every phase.
    void run(const std::vector<Example>& data, const std::function<void(const PhaseRecord&)>& on_phase = {});

    /// One iteration on an explicit batch (iteration index is the next one).
    std::vector<PhaseRecord> iterate(const Example& batch);

    Example batch_for(const std::vector<Example>& data, std::uint64_t iteration) const;

    Checkpoint checkpoint() const;
    void resume(const Checkpoint& checkpoint);

    const TrainState& state() const { return state_; }
    const SatConfig& config() const { return config_; }
    Adam<float>& optimizer() { return adam_; }

private:
    float phase_step(const Tensor<float>& images, const Tensor<float>& masks, int phase);

    CoarseToFineModel<float>& model_;
    SatConfig config_;
    Adam<float> adam_;
    TrainState state_;
    mutable std::map<std::uint64_t, std::vector<std::size_t>> permutations_;
};

}  // namespace forgeloc
