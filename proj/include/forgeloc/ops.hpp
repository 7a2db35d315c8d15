#pragma once

#include <array>
#include <span>
#include <vector>

#include "forgeloc/tensor.hpp"

namespace forgeloc {

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t dilation = 1;
    std::size_t padding = 0;

    /// Padding that keeps spatial dims for odd kernel size k at stride 1.
    static Conv2dOptions same(std::size_t kernel, std::size_t dilation = 1) {
        return Conv2dOptions{1, dilation, dilation * (kernel - 1) / 2};
    }
};

/// Output extent of a strided, dilated, zero-padded window along one axis.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t dilation, std::size_t padding);

/// 2-D cross-correlation. `weight` is [out_c, in_c, kh, kw]; `bias` may be an
/// undefined tensor or have out_c elements.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions options = {});

/// Applies every zero-sum filter in `filters` ([m, 1, k, k], odd k, constant)
/// to every input channel separately; output channel c*m + j holds channel c
/// filtered by filter j, at the input's spatial size.
///
/// Evaluated as sum_i f_i * (x[p + i] - x[p]) over an edge-replicated border,
/// which equals cross-correlation for zero-sum filters and maps constant
/// regions (and constant offsets) to exactly zero. Differentiable with respect
/// to the input only.
template <typename T>
Tensor<T> channelwise_highpass(const Tensor<T>& input, const Tensor<T>& filters);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Logistic function, clamped so saturated outputs stay strictly inside (0, 1).
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are padded with
/// -inf. Ties route the gradient to the first cell in row-major order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x);

/// Nearest-neighbour upsampling by an integer factor.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor = 2);

/// Concatenation along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// s * x where `s` is a one-element tensor (learnable scalar).
template <typename T>
Tensor<T> scale(const Tensor<T>& s, const Tensor<T>& x);

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T factor);

/// Same data, new shape with equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Batched matrix product. Operands are [n, 1, rows, cols]; each may be
/// transposed before multiplying.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                 bool transpose_b = false);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy. `pred` is clamped to [1e-7, 1 - 1e-7]; the
/// target must be binary. Gradient flows to `pred` only.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Row-major C = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc);

}  // namespace forgeloc
