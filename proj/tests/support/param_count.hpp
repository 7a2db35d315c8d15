#pragma once

#include <cstddef>

namespace forgeloc::testing {

inline std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; }

// Hand count of the implemented coarse-to-fine topology, independent of the
// model code. `in_c` is the image channel count; both nets use CW-HPF, the
// refined one carries attention.
inline std::size_t closed_form_count(std::size_t nbf, std::size_t k, std::size_t depth, std::size_t in_c) {
    const std::size_t f1 = 2 * nbf, f2 = 4 * nbf, f3 = 8 * nbf, f4 = 2 * nbf, f5 = nbf;
    auto block = [&](std::size_t in, std::size_t f) { return conv_params(in, f, 3) + (depth - 1) * conv_params(f, f, 3); };
    auto subnet = [&](std::size_t in_channels) {
        return block(3 * in_channels, f1) + block(f1, f2) + block(f2, f3) + 4 * conv_params(f3, f3, 3) +
               block(f3, f4) + block(f4 + f2, f5) + conv_params(f5 + f1, 1, 7);
    };
    const std::size_t attention = 2 * conv_params(3 * f3, f3, 1) + 3 * conv_params(f3, f3, 1) + 2 +
                                  conv_params(f3, f3, 1);
    return subnet(in_c) + conv_params(f5 + f1, k, 1) + subnet(k) + attention;
}

}  // namespace forgeloc::testing
