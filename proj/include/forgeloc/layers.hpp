#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "forgeloc/adam.hpp"
#include "forgeloc/ops.hpp"

namespace forgeloc {

using Rng = std::mt19937_64;

/// Derives an independent seed for a named subsystem from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index = 0);

/// Convolution with bias. Weights are He-initialised, biases start at zero.
template <typename T>
struct ConvLayer {
    Tensor<T> weight;
    Tensor<T> bias;
    Conv2dOptions options;

    ConvLayer() = default;
    /// "Same"-padded square kernel.
    ConvLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t dilation,
              Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, options); }

    void collect(ParameterList<T>& out, const std::string& prefix) const;
    std::size_t parameter_count() const { return weight.numel() + bias.numel(); }

    std::size_t in_channels() const { return weight.shape().c; }
    std::size_t out_channels() const { return weight.shape().n; }
};

extern template struct ConvLayer<float>;
extern template struct ConvLayer<double>;

}  // namespace forgeloc
