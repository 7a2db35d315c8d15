#include "forgeloc/cw_hpf.hpp"

#include <stdexcept>
#include <string>

#include "forgeloc/ops.hpp"

namespace forgeloc {

namespace {

constexpr double kb(double v) { return v / 4.0; }
constexpr double kv(double v) { return v / 12.0; }

// Transcribed coefficients; data/hpf_kernels.txt carries the same table.
constexpr std::array<HpfCoefficients, kHpfKernelCount> kSrmKernels = {{
    // KB
    {0, 0, 0, 0, 0,
     0, kb(-1), kb(2), kb(-1), 0,
     0, kb(2), kb(-4), kb(2), 0,
     0, kb(-1), kb(2), kb(-1), 0,
     0, 0, 0, 0, 0},
    // KV
    {kv(-1), kv(2), kv(-2), kv(2), kv(-1),
     kv(2), kv(-6), kv(8), kv(-6), kv(2),
     kv(-2), kv(8), kv(-12), kv(8), kv(-2),
     kv(2), kv(-6), kv(8), kv(-6), kv(2),
     kv(-1), kv(2), kv(-2), kv(2), kv(-1)},
    // first order: horizontal forward difference
    {0, 0, 0, 0, 0,
     0, 0, 0, 0, 0,
     0, 0, -1, 1, 0,
     0, 0, 0, 0, 0,
     0, 0, 0, 0, 0},
}};

}  // namespace

const char* to_string(FrontEnd f) {
    switch (f) {
        case FrontEnd::rgb: return "rgb";
        case FrontEnd::hpf: return "hpf";
        case FrontEnd::cwhpf: return "cwhpf";
    }
    return "?";
}

FrontEnd front_end_from_string(const std::string& s) {
    if (s == "rgb") return FrontEnd::rgb;
    if (s == "hpf") return FrontEnd::hpf;
    if (s == "cwhpf") return FrontEnd::cwhpf;
    throw std::invalid_argument("unknown front end '" + s + "' (expected rgb, hpf or cwhpf)");
}

const std::array<HpfCoefficients, kHpfKernelCount>& srm_kernels() {
    return kSrmKernels;
}

template <typename T>
HpfKernelBank<T>::HpfKernelBank() : filters_(Shape{kHpfKernelCount, 1, kHpfKernelSize, kHpfKernelSize}) {
    auto dst = filters_.mutable_data();
    for (std::size_t k = 0; k < kHpfKernelCount; ++k) {
        for (std::size_t i = 0; i < kHpfKernelSize * kHpfKernelSize; ++i) {
            dst[k * kHpfKernelSize * kHpfKernelSize + i] = static_cast<T>(kSrmKernels[k][i]);
        }
    }
}

template <typename T>
Tensor<T> hpf_conv(const Tensor<T>& channel_map, const HpfKernelBank<T>& bank) {
    if (channel_map.shape().c != 1) {
        throw ShapeError("hpf_conv: expected a single-channel map, got " + channel_map.shape().str());
    }
    return channelwise_highpass(channel_map, bank.filters());
}

template <typename T>
Tensor<T> cw_hpf(const Tensor<T>& feature, const HpfKernelBank<T>& bank) {
    return channelwise_highpass(feature, bank.filters());
}

template <typename T>
Tensor<T> plain_hpf(const Tensor<T>& feature, const HpfKernelBank<T>& bank) {
    const std::size_t c = feature.shape().c;
    // Sums the per-channel responses of each kernel.
    Tensor<T> gather(Shape{kHpfKernelCount, kHpfKernelCount * c, 1, 1});
    for (std::size_t k = 0; k < kHpfKernelCount; ++k) {
        for (std::size_t ch = 0; ch < c; ++ch) gather.at(k, ch * kHpfKernelCount + k, 0, 0) = T(1);
    }
    return conv2d(cw_hpf(feature, bank), gather, Tensor<T>());
}

std::size_t front_end_channels(FrontEnd front, std::size_t input_channels) {
    switch (front) {
        case FrontEnd::rgb: return input_channels;
        case FrontEnd::hpf: return kHpfKernelCount;
        case FrontEnd::cwhpf: return kHpfKernelCount * input_channels;
    }
    return input_channels;
}

template <typename T>
Tensor<T> apply_front_end(FrontEnd front, const Tensor<T>& x, const HpfKernelBank<T>& bank) {
    switch (front) {
        case FrontEnd::rgb: return x;
        case FrontEnd::hpf: return plain_hpf(x, bank);
        case FrontEnd::cwhpf: return cw_hpf(x, bank);
    }
    return x;
}

template class HpfKernelBank<float>;
template class HpfKernelBank<double>;

#define FORGELOC_INSTANTIATE_HPF(T)                                                      \
    template Tensor<T> hpf_conv(const Tensor<T>&, const HpfKernelBank<T>&);             \
    template Tensor<T> cw_hpf(const Tensor<T>&, const HpfKernelBank<T>&);               \
    template Tensor<T> plain_hpf(const Tensor<T>&, const HpfKernelBank<T>&);            \
    template Tensor<T> apply_front_end(FrontEnd, const Tensor<T>&, const HpfKernelBank<T>&);

FORGELOC_INSTANTIATE_HPF(float)
FORGELOC_INSTANTIATE_HPF(double)

#undef FORGELOC_INSTANTIATE_HPF

}  // namespace forgeloc
