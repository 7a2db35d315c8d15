#include "forgeloc/layers.hpp"

#include <cmath>

namespace forgeloc {

std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index) {
    // FNV-1a over the label, then splitmix64 finalisation.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : label) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    std::uint64_t z = base ^ h ^ (index * 0x9e3779b97f4a7c15ULL);
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

template <typename T>
ConvLayer<T>::ConvLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                        std::size_t dilation, Rng& rng)
    : weight(Shape{out_channels, in_channels, kernel, kernel}),
      bias(Shape{out_channels, 1, 1, 1}),
      options(Conv2dOptions::same(kernel, dilation)) {
    const double fan_in = static_cast<double>(in_channels * kernel * kernel);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (T& v : weight.mutable_data()) v = static_cast<T>(dist(rng));
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

template <typename T>
void ConvLayer<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;

}  // namespace forgeloc
