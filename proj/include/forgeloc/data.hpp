#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "forgeloc/layers.hpp"
#include "forgeloc/training.hpp"

namespace forgeloc {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Planar (channel-major) float image.
struct Raster {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;

    Raster() = default;
    Raster(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
    std::size_t plane() const { return height * width; }
    bool same_size(const Raster& o) const { return height == o.height && width == o.width; }
    bool operator==(const Raster&) const = default;
};

/// Reads an 8-bit PNG. Gray images give one channel, colour images three
/// (alpha is dropped). Values are scaled to [0, 1].
Raster read_png(const std::filesystem::path& path);
/// Writes one channel as 8-bit gray or three as 8-bit RGB, rounding v*255.
void write_png(const Raster& raster, const std::filesystem::path& path);

/// Rounds every value to the nearest multiple of 1/255 inside [0, 1].
void quantize8(Raster& raster);

/// Area (box-overlap) resampling; every output pixel is the overlap-weighted
/// mean of the input pixels its footprint covers.
Raster resize_image(const Raster& image, std::size_t height, std::size_t width);
/// Nearest-neighbour resampling (source index floor(dst * in / out)).
Raster resize_mask(const Raster& mask, std::size_t height, std::size_t width);

enum class ForgeryKind { splice, copy_move, removal };

const char* to_string(ForgeryKind kind);
ForgeryKind forgery_kind_from_string(const std::string& s);

struct ForgerySample {
    Raster image;  // 3 channels in [0, 1]
    Raster mask;   // 1 channel, 1 = tampered
    ForgeryKind kind = ForgeryKind::splice;
};

inline constexpr double kMinTamperedFraction = 0.005;
inline constexpr double kMaxTamperedFraction = 0.5;
inline constexpr int kPlacementAttempts = 10;

/// Sensor-like noise: luma noise shared by all channels plus zero-mean
/// colour noise that cancels when channels are summed.
struct NoiseModel {
    double luma_sigma = 0.015;
    double chroma_sigma = 0.01;
};

/// Procedural scene: smooth gradient, low-frequency texture and flat shapes,
/// then noise from `noise`. Values lie in [0, 1].
Raster generate_base(std::size_t height, std::size_t width, const NoiseModel& noise, Rng& rng);

/// Random elliptical or star-polygon region covering a fraction of the image
/// inside (0.005, 0.5). Throws after 10 degenerate draws.
Raster sample_region(std::size_t height, std::size_t width, Rng& rng, double max_extent = 0.6);

struct SpliceOptions {
    bool feather = false;  // 1-pixel blend at the region border
};

ForgerySample generate_splice(const Raster& base, const Raster& donor, Rng& rng, SpliceOptions options = {});
/// Copies a region of `base` to a shifted, non-overlapping destination.
ForgerySample generate_copy_move(const Raster& base, Rng& rng);
/// Erases a region and fills it by diffusion from its border.
ForgerySample generate_removal(const Raster& base, Rng& rng);

struct FillReport {
    int sweeps = 0;
    double last_change = 0.0;
};

/// Fills pixels where `region` is 1 from the surrounding pixels: an inward
/// layer-by-layer average, then over-relaxed Gauss-Seidel sweeps towards the
/// 4-neighbour mean, clamped to the value range of the region's border ring,
/// until the largest update falls below `tolerance` or `max_sweeps` is hit.
Raster diffusion_fill(const Raster& image, const Raster& region, FillReport* report = nullptr,
                      double tolerance = 1e-4, int max_sweeps = 200);

/// Generates one quantized sample of `kind` from a seed. If `bases` is
/// non-empty, base and donor scenes are drawn from it instead of being
/// synthesized.
ForgerySample generate_sample(ForgeryKind kind, std::size_t height, std::size_t width, std::uint64_t seed,
                              const std::vector<Raster>* bases = nullptr);

Example to_example(const ForgerySample& sample);
Tensor<float> raster_to_tensor(const Raster& raster);
/// Sample `index` of a [n, c, h, w] tensor.
Raster tensor_to_raster(const Tensor<float>& tensor, std::size_t index = 0);

enum class Split { train, test };
const char* to_string(Split split);

struct ManifestEntry {
    std::string image_path;  // relative to the manifest's directory unless absolute
    std::string mask_path;
    ForgeryKind kind = ForgeryKind::splice;
    std::uint64_t seed = 0;
    Split split = Split::train;
};

struct Manifest {
    std::filesystem::path root;  // directory relative paths are resolved against
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> select(Split split) const;
    std::filesystem::path resolve(const std::string& p) const;
};

/// Throws if a sample appears in both splits (same image path or seed).
void check_disjoint(const Manifest& manifest);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

struct DatasetOptions {
    std::size_t train_count = 80;
    std::size_t test_count = 20;
    std::size_t height = 64;
    std::size_t width = 64;
    std::uint64_t seed = 0;
    std::vector<ForgeryKind> kinds = {ForgeryKind::splice, ForgeryKind::copy_move, ForgeryKind::removal};
    std::filesystem::path base_dir;  // optional folder of PNG scenes
};

/// In-memory samples of a dataset (train entries first, then test).
std::vector<std::pair<ManifestEntry, ForgerySample>> generate_samples(const DatasetOptions& options);

/// Writes images/, masks/ and manifest.tsv under `out_dir`.
Manifest generate_dataset(const DatasetOptions& options, const std::filesystem::path& out_dir);

/// PNG files of a folder, sorted by name, resized to height x width.
std::vector<Raster> load_base_folder(const std::filesystem::path& dir, std::size_t height, std::size_t width);

/// Loads one split as examples, resizing to height x width when needed.
std::vector<Example> load_examples(const Manifest& manifest, Split split, std::size_t height, std::size_t width,
                                   std::vector<std::string>* warnings = nullptr);

}  // namespace forgeloc
