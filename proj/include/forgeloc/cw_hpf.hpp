#pragma once

#include <array>
#include <cstddef>

#include "forgeloc/tensor.hpp"

namespace forgeloc {

/// Which noise front end a sub-network puts in front of its first VGG block.
enum class FrontEnd {
    rgb,    // raw input, no filtering
    hpf,    // three SRM kernels, each summed over all input channels
    cwhpf,  // three SRM kernels applied to every channel separately
};

const char* to_string(FrontEnd f);
FrontEnd front_end_from_string(const std::string& s);

inline constexpr std::size_t kHpfKernelSize = 5;
inline constexpr std::size_t kHpfKernelCount = 3;

using HpfCoefficients = std::array<double, kHpfKernelSize * kHpfKernelSize>;

/// The fixed SRM high-pass kernels, in bank order: KB, KV, first order.
const std::array<HpfCoefficients, kHpfKernelCount>& srm_kernels();

/// Non-learnable bank of the three 5x5 high-pass kernels, stored as a
/// [3, 1, 5, 5] tensor that never requires gradients.
template <typename T>
class HpfKernelBank {
public:
    HpfKernelBank();

    const Tensor<T>& filters() const { return filters_; }

    /// Output channel count produced from `input_channels` channels.
    static std::size_t expanded_channels(std::size_t input_channels) {
        return kHpfKernelCount * input_channels;
    }

private:
    Tensor<T> filters_;
};

/// Filters a single-channel map with all three kernels ("same" padding).
/// Input [n, 1, h, w] -> output [n, 3, h, w].
template <typename T>
Tensor<T> hpf_conv(const Tensor<T>& channel_map, const HpfKernelBank<T>& bank);

/// Channel-wise high-pass filtering: [n, C, h, w] -> [n, 3C, h, w] with the
/// output ordered channel-major (S1*k1, S1*k2, S1*k3, S2*k1, ...).
template <typename T>
Tensor<T> cw_hpf(const Tensor<T>& feature, const HpfKernelBank<T>& bank);

/// Conventional HPF layer: [n, C, h, w] -> [n, 3, h, w] where output j is
/// kernel j applied to every channel and summed.
template <typename T>
Tensor<T> plain_hpf(const Tensor<T>& feature, const HpfKernelBank<T>& bank);

/// Applies the chosen front end. Output channels: see front_end_channels().
template <typename T>
Tensor<T> apply_front_end(FrontEnd front, const Tensor<T>& x, const HpfKernelBank<T>& bank);

std::size_t front_end_channels(FrontEnd front, std::size_t input_channels);

extern template class HpfKernelBank<float>;
extern template class HpfKernelBank<double>;

}  // namespace forgeloc
