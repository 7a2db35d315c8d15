#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "forgeloc/attention.hpp"
#include "forgeloc/cw_hpf.hpp"
#include "forgeloc/layers.hpp"

namespace forgeloc {

struct ModelConfig {
    std::size_t nbf = 32;              // basic filter count
    std::size_t k = 16;                // feature-connection channels
    std::size_t convs_per_block = 3;
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t input_channels = 3;
    FrontEnd coarse_front = FrontEnd::cwhpf;
    FrontEnd refined_front = FrontEnd::cwhpf;
    bool attention = true;
    bool coarse_to_fine = true;

    /// Throws std::invalid_argument on an unusable configuration.
    void validate() const;

    /// Filters of VGG block i (1-based): nbf*2^i for i <= 3, nbf*2^(5-i) after.
    std::size_t block_filters(std::size_t i) const;

    bool operator==(const ModelConfig&) const = default;
};

inline constexpr std::array<std::size_t, 4> kBridgeDilations = {2, 4, 8, 16};
inline constexpr std::size_t kMaskHeadKernel = 7;

/// Stacked 3x3 convolutions, each followed by a rectifier.
template <typename T>
class VggBlock {
public:
    VggBlock() = default;
    VggBlock(std::size_t in_channels, std::size_t filters, std::size_t depth, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;
    std::size_t out_channels() const { return convs_.back().out_channels(); }

private:
    std::vector<ConvLayer<T>> convs_;
};

/// Four 3x3 convolutions at dilation 2, 4, 8, 16 with rectifiers.
template <typename T>
class DilatedModule {
public:
    DilatedModule() = default;
    DilatedModule(std::size_t channels, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;
    const std::vector<ConvLayer<T>>& layers() const { return convs_; }
    std::vector<ConvLayer<T>>& layers() { return convs_; }

private:
    std::vector<ConvLayer<T>> convs_;
};

template <typename T>
struct ModelTrace {
    Tensor<T> front_noise;  // first sub-network's front-end output
    AttentionTrace<T> attention;
};

/// Encoder/decoder sub-network: front end, V1..V5 with pooling after V1 and
/// V2, dilated bridge, optional forgery attention, skip concatenation of V2
/// into V4's and V1 into V5's upsampled output, a 7x7 sigmoid mask head and
/// an optional 1x1 feature head.
template <typename T>
class SubNet {
public:
    struct Output {
        Tensor<T> mask;
        Tensor<T> features;  // undefined without a feature head
    };

    SubNet() = default;
    SubNet(const ModelConfig& config, std::size_t in_channels, FrontEnd front, bool with_attention,
           std::size_t feature_channels, Rng& rng);

    Output forward(const Tensor<T>& x, ModelTrace<T>* trace = nullptr) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    std::size_t in_channels() const { return in_channels_; }
    bool has_attention() const { return attention_.has_value(); }
    const ForgeryAttention<T>& attention() const { return *attention_; }
    ForgeryAttention<T>& attention() { return *attention_; }
    DilatedModule<T>& bridge() { return bridge_; }

private:
    std::size_t in_channels_ = 0;
    FrontEnd front_ = FrontEnd::cwhpf;
    HpfKernelBank<T> bank_;
    std::array<VggBlock<T>, 5> blocks_;
    DilatedModule<T> bridge_;
    std::optional<ForgeryAttention<T>> attention_;
    ConvLayer<T> mask_head_;
    std::optional<ConvLayer<T>> feature_head_;
};

template <typename T>
struct ModelOutput {
    Tensor<T> coarse_mask;  // I_M1; undefined for a single-stage model
    Tensor<T> features;     // feature connection; undefined for a single-stage model
    Tensor<T> mask;         // I_M, the final prediction
};

/// Coarse net feeding its k-channel last-layer features into the refined net.
/// With coarse_to_fine = false only one sub-network exists and it predicts the
/// final mask directly from the image.
template <typename T>
class CoarseToFineModel {
public:
    explicit CoarseToFineModel(const ModelConfig& config, std::uint64_t seed = 0);

    ModelOutput<T> forward(const Tensor<T>& image, ModelTrace<T>* trace = nullptr) const;

    /// Coarse mask and k-channel features. Requires coarse_to_fine.
    std::pair<Tensor<T>, Tensor<T>> coarse_forward(const Tensor<T>& image, ModelTrace<T>* trace = nullptr) const;
    /// Refined mask from k-channel features. Requires coarse_to_fine.
    Tensor<T> refined_forward(const Tensor<T>& features, ModelTrace<T>* trace = nullptr) const;

    /// Learnable parameters in declaration order.
    ParameterList<T> parameters() const;
    std::size_t parameter_count() const;

    const ModelConfig& config() const { return config_; }
    const HpfKernelBank<T>& kernel_bank() const { return bank_; }
    SubNet<T>& first() { return first_; }
    SubNet<T>& refined() { return second_; }

private:
    void check_image(const Tensor<T>& image) const;

    ModelConfig config_;
    HpfKernelBank<T> bank_;
    SubNet<T> first_;   // coarse net, or the only net
    SubNet<T> second_;  // refined net when coarse_to_fine
};

extern template class VggBlock<float>;
extern template class VggBlock<double>;
extern template class DilatedModule<float>;
extern template class DilatedModule<double>;
extern template class SubNet<float>;
extern template class SubNet<double>;
extern template class CoarseToFineModel<float>;
extern template class CoarseToFineModel<double>;

}  // namespace forgeloc
