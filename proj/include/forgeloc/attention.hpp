#pragma once

#include "forgeloc/cw_hpf.hpp"
#include "forgeloc/layers.hpp"

namespace forgeloc {

/// Intermediate results of one attention pass, kept for inspection.
template <typename T>
struct AttentionTrace {
    Tensor<T> spatial_matrix;  // SAM, [n, 1, h*w, h*w]
    Tensor<T> channel_matrix;  // CAM, [n, 1, C, C]
    Tensor<T> spatial_term;    // SAM-weighted noise features, [n, C, h, w]
    Tensor<T> channel_term;    // CAM-weighted noise features, [n, C, h, w]
};

/// Position-pair attention over high-pass noise features.
///
///   noise = conv1x1(cw_hpf(F));  q, k, v = conv1x1(noise)
///   SAM   = sigmoid(q' k'^T)            q', k', v' are (h*w) x C
///   out   = scale * reshape(SAM v') + F
template <typename T>
class SpatialAttentionBranch {
public:
    SpatialAttentionBranch() = default;
    SpatialAttentionBranch(std::size_t channels, Rng& rng);

    Tensor<T> forward(const Tensor<T>& f, AttentionTrace<T>* trace = nullptr) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    ConvLayer<T> noise_conv;
    ConvLayer<T> key;    // F1
    ConvLayer<T> query;  // F2
    ConvLayer<T> value;  // F3
    Tensor<T> scale;     // starts at 0

private:
    HpfKernelBank<T> bank_;
};

/// Channel-pair attention over high-pass noise features.
///
///   F'  = conv1x1(cw_hpf(F)),  F'_R its (h*w) x C reshape
///   CAM = sigmoid(F'_R^T F'_R)
///   out = scale * reshape(F'_R CAM) + F
template <typename T>
class ChannelAttentionBranch {
public:
    ChannelAttentionBranch() = default;
    ChannelAttentionBranch(std::size_t channels, Rng& rng);

    Tensor<T> forward(const Tensor<T>& f, AttentionTrace<T>* trace = nullptr) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;

    ConvLayer<T> noise_conv;
    Tensor<T> scale;  // starts at 0

private:
    HpfKernelBank<T> bank_;
};

/// Both branches summed and fused by a 1x1 convolution; shape preserving.
template <typename T>
class ForgeryAttention {
public:
    ForgeryAttention() = default;
    ForgeryAttention(std::size_t channels, Rng& rng);

    Tensor<T> forward(const Tensor<T>& f, AttentionTrace<T>* trace = nullptr) const;
    void collect(ParameterList<T>& out, const std::string& prefix) const;
    std::size_t channels() const { return fuse.out_channels(); }

    SpatialAttentionBranch<T> spatial;
    ChannelAttentionBranch<T> channel;
    ConvLayer<T> fuse;
};

extern template class SpatialAttentionBranch<float>;
extern template class SpatialAttentionBranch<double>;
extern template class ChannelAttentionBranch<float>;
extern template class ChannelAttentionBranch<double>;
extern template class ForgeryAttention<float>;
extern template class ForgeryAttention<double>;

}  // namespace forgeloc
