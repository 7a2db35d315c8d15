#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forgeloc/data.hpp"
#include "forgeloc/network.hpp"

namespace forgeloc {

/// Probability that a random tampered pixel scores above a random pristine
/// one, ties counting one half (rank-sum form with midranks). Empty when the
/// ground truth holds only one class.
template <typename T>
std::optional<double> pixel_auc(std::span<const T> pred, std::span<const T> gt);

/// 2TP / (2TP + FP + FN) with pred >= threshold as positive. Defined as 1
/// when both prediction and ground truth are empty.
template <typename T>
double pixel_f1(std::span<const T> pred, std::span<const T> gt, double threshold = 0.5);

struct RocPoint {
    double threshold;
    double fpr;
    double tpr;
};

/// ROC points for every distinct score, highest threshold first, starting at
/// (0, 0) and ending at (1, 1).
template <typename T>
std::vector<RocPoint> roc_curve(std::span<const T> pred, std::span<const T> gt);

struct Perturbation {
    enum class Kind { none, resize, gaussian_blur, gaussian_noise, fgsm };
    Kind kind = Kind::none;
    double value = 0.0;  // resize factor, blur kernel size, noise sigma (0-255 scale) or fgsm epsilon

    /// Parses "resize:0.5", "blur:3", "noise:15", "fgsm:0.02" or "clean".
    static Perturbation parse(const std::string& text);
    void validate() const;
    std::string label() const;
};

/// Normalized Gaussian blur with an odd square kernel; sigma follows the
/// usual 0.3*((k-1)/2 - 1) + 0.8 rule and borders are mirrored without
/// repeating the edge pixel.
Raster gaussian_blur(const Raster& image, int kernel);
/// Area downscale by `factor`, then area resize back to the original size.
Raster resize_round_trip(const Raster& image, double factor);
/// Adds N(0, (sigma/255)^2) per pixel and channel, clipped to [0, 1].
Raster gaussian_noise(const Raster& image, double sigma, Rng& rng);

/// Applies a perturbation to a batch of images. The fgsm kind attacks
/// `model` with the batch's masks.
Tensor<float> perturb(const Tensor<float>& images, const Tensor<float>& masks, const Perturbation& spec, Rng& rng,
                      const CoarseToFineModel<float>* model = nullptr);

struct MetricsRow {
    std::string label;
    double auc = 0.0;  // mean over images with a defined AUC
    double f1 = 0.0;   // mean over all images
    std::size_t auc_count = 0;
    std::size_t f1_count = 0;
};

struct MetricsReport {
    double threshold = 0.5;
    std::size_t skipped = 0;
    std::vector<std::string> warnings;
    std::vector<MetricsRow> rows;  // clean first

    const MetricsRow& row(const std::string& label) const;
    /// Aligned table with a header describing threshold and aggregation.
    std::string format() const;
};

/// Final-mask predictions for a batch, without recording gradients.
Tensor<float> predict(const CoarseToFineModel<float>& model, const Tensor<float>& images);

/// Per-image AUC and F1 of the model on clean and perturbed copies of every
/// sample, averaged over images. Perturbation randomness is seeded per
/// sample from `seed`.
MetricsReport evaluate(const CoarseToFineModel<float>& model, const std::vector<Example>& samples,
                       const std::vector<Perturbation>& perturbations, std::uint64_t seed,
                       std::size_t batch_size = 8);

/// As above on one manifest split; unreadable samples are skipped, counted
/// and listed as warnings.
MetricsReport evaluate(const CoarseToFineModel<float>& model, const Manifest& manifest, Split split,
                       const std::vector<Perturbation>& perturbations, std::uint64_t seed,
                       std::size_t batch_size = 8);

}  // namespace forgeloc
