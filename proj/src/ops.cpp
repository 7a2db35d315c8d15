#include "forgeloc/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace forgeloc {

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

template <typename T>
Graph<T>* recorder(std::initializer_list<const Tensor<T>*> inputs) {
    Graph<T>* g = Graph<T>::active();
    if (!g) return nullptr;
    for (const Tensor<T>* t : inputs) {
        if (t->defined() && t->requires_grad()) return g;
    }
    return nullptr;
}

template <typename T>
bool wants_grad(const ImplPtr<T>& p) {
    return p && p->requires_grad;
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& x = a.shape();
    const Shape& y = b.shape();
    const char* dim = nullptr;
    if (x.n != y.n) dim = "batch";
    else if (x.c != y.c) dim = "channel";
    else if (x.h != y.h) dim = "height";
    else if (x.w != y.w) dim = "width";
    if (dim) {
        throw ShapeError(std::string(op) + ": " + dim + " dimension mismatch between " + x.str() +
                         " and " + y.str());
    }
}

// Unfolds one sample [c, h, w] into columns [c*kh*kw, oh*ow].
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            const Conv2dOptions& o, std::size_t oh, std::size_t ow, T* cols) {
    const auto ih = static_cast<std::ptrdiff_t>(h);
    const auto iw = static_cast<std::ptrdiff_t>(w);
    const auto pad = static_cast<std::ptrdiff_t>(o.padding);
    const auto stride = static_cast<std::ptrdiff_t>(o.stride);
    const auto dil = static_cast<std::ptrdiff_t>(o.dilation);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* plane = x + ch * h * w;
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                T* row = cols + ((ch * kh + ki) * kw + kj) * oh * ow;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki) * dil - pad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj) * dil - pad;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    T* dst = row + oy * ow;
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + dy;
                    if (iy < 0 || iy >= ih) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = plane + iy * iw;
                    if (stride == 1) {
                        const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-dx, 0, static_cast<std::ptrdiff_t>(ow));
                        const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(iw - dx, lo, static_cast<std::ptrdiff_t>(ow));
                        std::fill(dst, dst + lo, T(0));
                        std::copy(src + lo + dx, src + hi + dx, dst + lo);
                        std::fill(dst + hi, dst + ow, T(0));
                    } else {
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride + dx;
                            dst[ox] = (ix >= 0 && ix < iw) ? src[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters columns back onto one sample, accumulating.
template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, const Conv2dOptions& o, std::size_t oh, std::size_t ow, T* x) {
    const auto ih = static_cast<std::ptrdiff_t>(h);
    const auto iw = static_cast<std::ptrdiff_t>(w);
    const auto pad = static_cast<std::ptrdiff_t>(o.padding);
    const auto stride = static_cast<std::ptrdiff_t>(o.stride);
    const auto dil = static_cast<std::ptrdiff_t>(o.dilation);
    for (std::size_t ch = 0; ch < c; ++ch) {
        T* plane = x + ch * h * w;
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const T* row = cols + ((ch * kh + ki) * kw + kj) * oh * ow;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki) * dil - pad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj) * dil - pad;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + dy;
                    if (iy < 0 || iy >= ih) continue;
                    const T* src = row + oy * ow;
                    T* dst = plane + iy * iw;
                    if (stride == 1) {
                        const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-dx, 0, static_cast<std::ptrdiff_t>(ow));
                        const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(iw - dx, lo, static_cast<std::ptrdiff_t>(ow));
                        for (std::ptrdiff_t ox = lo; ox < hi; ++ox) dst[ox + dx] += src[ox];
                    } else {
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride + dx;
                            if (ix >= 0 && ix < iw) dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

// Direct stride-1 convolution for very few output channels, where a GEMM
// degenerates to a matrix-vector product. Each tap is a shifted row axpy.
template <typename T, typename RowFn>
void for_each_tap_row(std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                      const Conv2dOptions& o, std::size_t oh, std::size_t ow, RowFn&& fn) {
    const auto ih = static_cast<std::ptrdiff_t>(h);
    const auto iw = static_cast<std::ptrdiff_t>(w);
    const auto pad = static_cast<std::ptrdiff_t>(o.padding);
    const auto dil = static_cast<std::ptrdiff_t>(o.dilation);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const std::size_t tap = (ch * kh + ki) * kw + kj;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki) * dil - pad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj) * dil - pad;
                const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-dx, 0, static_cast<std::ptrdiff_t>(ow));
                const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(iw - dx, lo, static_cast<std::ptrdiff_t>(ow));
                if (lo >= hi) continue;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) + dy;
                    if (iy < 0 || iy >= ih) continue;
                    const std::size_t in_off = ch * h * w + static_cast<std::size_t>(iy * iw + lo + dx);
                    fn(tap, in_off, oy * ow + static_cast<std::size_t>(lo), static_cast<std::size_t>(hi - lo));
                }
            }
        }
    }
}

constexpr std::size_t kDirectConvMaxOut = 2;

}  // namespace

template <>
void gemm<float>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
                 const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
                 std::size_t ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

// Plain loops rather than cblas_dgemm: the OpenBLAS 0.3.20 double kernels
// for AVX-512 targets return wrong products for many small shapes. Double
// precision only serves gradient checks, so speed matters little here.
template <>
void gemm<double>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
                  const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
                  double* c, std::size_t ldc) {
    auto at = [&](std::size_t i, std::size_t p) { return trans_a ? a[p * lda + i] : a[i * lda + p]; };
    for (std::size_t i = 0; i < m; ++i) {
        double* row = c + i * ldc;
        for (std::size_t j = 0; j < n; ++j) row[j] = beta == 0.0 ? 0.0 : beta * row[j];
        if (trans_b) {
            for (std::size_t j = 0; j < n; ++j) {
                const double* bj = b + j * ldb;
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += at(i, p) * bj[p];
                row[j] += alpha * acc;
            }
        } else {
            for (std::size_t p = 0; p < k; ++p) {
                const double f = alpha * at(i, p);
                const double* bp = b + p * ldb;
                for (std::size_t j = 0; j < n; ++j) row[j] += f * bp[j];
            }
        }
    }
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t dilation, std::size_t padding) {
    if (stride == 0 || dilation == 0 || kernel == 0) {
        throw ShapeError("conv2d: stride, dilation and kernel size must be positive");
    }
    const std::size_t span = dilation * (kernel - 1) + 1;
    if (in + 2 * padding < span) return 0;
    return (in + 2 * padding - span) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions o) {
    const Shape xs = input.shape();
    const Shape ws = weight.shape();
    if (ws.c != xs.c) {
        throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels but kernel expects in_c=" +
                         std::to_string(ws.c));
    }
    if (bias.defined() && bias.numel() != ws.n) {
        throw ShapeError("conv2d: bias has " + std::to_string(bias.numel()) + " elements, expected out_c=" +
                         std::to_string(ws.n));
    }
    const std::size_t oh = conv_output_extent(xs.h, ws.h, o.stride, o.dilation, o.padding);
    const std::size_t ow = conv_output_extent(xs.w, ws.w, o.stride, o.dilation, o.padding);
    if (oh == 0) throw ShapeError("conv2d: kernel and padding leave no output rows (height " + std::to_string(xs.h) + ")");
    if (ow == 0) throw ShapeError("conv2d: kernel and padding leave no output columns (width " + std::to_string(xs.w) + ")");

    const std::size_t oc = ws.n;
    const std::size_t kdim = ws.c * ws.h * ws.w;
    const std::size_t pix = oh * ow;
    const bool pointwise = ws.h == 1 && ws.w == 1 && o.stride == 1 && o.padding == 0;
    const bool direct = !pointwise && o.stride == 1 && oc <= kDirectConvMaxOut;

    Tensor<T> out(Shape{xs.n, oc, oh, ow});
    std::vector<T> cols(pointwise || direct ? 0 : kdim * pix);
    const T* x = input.data().data();
    const T* wt = weight.data().data();
    T* y = out.mutable_data().data();
    for (std::size_t n = 0; n < xs.n; ++n) {
        const T* xn = x + n * xs.c * xs.h * xs.w;
        T* yn = y + n * oc * pix;
        if (direct) {
            for (std::size_t c = 0; c < oc; ++c) {
                const T* wc = wt + c * kdim;
                T* yc = yn + c * pix;
                for_each_tap_row<T>(xs.c, xs.h, xs.w, ws.h, ws.w, o, oh, ow,
                                    [&](std::size_t tap, std::size_t in_off, std::size_t out_off, std::size_t len) {
                                        const T wv = wc[tap];
                                        const T* a = xn + in_off;
                                        T* b = yc + out_off;
                                        for (std::size_t i = 0; i < len; ++i) b[i] += wv * a[i];
                                    });
            }
        } else {
            const T* src = xn;
            if (!pointwise) {
                im2col(xn, xs.c, xs.h, xs.w, ws.h, ws.w, o, oh, ow, cols.data());
                src = cols.data();
            }
            gemm<T>(false, false, oc, pix, kdim, T(1), wt, kdim, src, pix, T(0), yn, pix);
        }
        if (bias.defined()) {
            const T* b = bias.data().data();
            for (std::size_t c = 0; c < oc; ++c) {
                T* row = yn + c * pix;
                for (std::size_t p = 0; p < pix; ++p) row[p] += b[c];
            }
        }
    }

    if (Graph<T>* g = recorder<T>({&input, &weight, &bias})) {
        ImplPtr<T> xi = input.handle(), wi = weight.handle(), bi = bias.handle(), yi = out.handle();
        g->record("conv2d", {xi, wi, bi ? bi : wi}, yi, [xi, wi, bi, yi, o, pointwise, direct, oh, ow]() {
            const Shape xs = xi->shape;
            const Shape ws = wi->shape;
            const std::size_t oc = ws.n;
            const std::size_t kdim = ws.c * ws.h * ws.w;
            const std::size_t pix = oh * ow;
            const bool need_w = wi->requires_grad;
            const bool need_b = wants_grad(bi);
            const bool need_x = xi->requires_grad;
            if (need_w) wi->ensure_grad();
            if (need_b) bi->ensure_grad();
            if (need_x) xi->ensure_grad();
            std::vector<T> cols(pointwise || direct ? 0 : kdim * pix);
            std::vector<T> dcols(pointwise || direct || !need_x ? 0 : kdim * pix);
            for (std::size_t n = 0; n < xs.n; ++n) {
                const T* dy = yi->grad.data() + n * oc * pix;
                const T* xn = xi->data.data() + n * xs.c * xs.h * xs.w;
                if (direct) {
                    T* dx = need_x ? xi->grad.data() + n * xs.c * xs.h * xs.w : nullptr;
                    for (std::size_t c = 0; c < oc; ++c) {
                        const T* wc = wi->data.data() + c * kdim;
                        T* dwc = need_w ? wi->grad.data() + c * kdim : nullptr;
                        const T* dyc = dy + c * pix;
                        for_each_tap_row<T>(
                            xs.c, xs.h, xs.w, ws.h, ws.w, o, oh, ow,
                            [&](std::size_t tap, std::size_t in_off, std::size_t out_off, std::size_t len) {
                                const T* g = dyc + out_off;
                                if (dwc) {
                                    const T* a = xn + in_off;
                                    T acc = 0;
                                    for (std::size_t i = 0; i < len; ++i) acc += g[i] * a[i];
                                    dwc[tap] += acc;
                                }
                                if (dx) {
                                    const T wv = wc[tap];
                                    T* d = dx + in_off;
                                    for (std::size_t i = 0; i < len; ++i) d[i] += wv * g[i];
                                }
                            });
                    }
                }
                if (need_w && !direct) {
                    const T* src = xn;
                    if (!pointwise) {
                        im2col(xn, xs.c, xs.h, xs.w, ws.h, ws.w, o, oh, ow, cols.data());
                        src = cols.data();
                    }
                    gemm<T>(false, true, oc, kdim, pix, T(1), dy, pix, src, pix, T(1), wi->grad.data(), kdim);
                }
                if (need_b) {
                    for (std::size_t c = 0; c < oc; ++c) {
                        T acc = 0;
                        const T* row = dy + c * pix;
                        for (std::size_t p = 0; p < pix; ++p) acc += row[p];
                        bi->grad[c] += acc;
                    }
                }
                if (need_x && !direct) {
                    T* dx = xi->grad.data() + n * xs.c * xs.h * xs.w;
                    if (pointwise) {
                        gemm<T>(true, false, kdim, pix, oc, T(1), wi->data.data(), kdim, dy, pix, T(1), dx, pix);
                    } else {
                        gemm<T>(true, false, kdim, pix, oc, T(1), wi->data.data(), kdim, dy, pix, T(0),
                                dcols.data(), pix);
                        col2im(dcols.data(), xs.c, xs.h, xs.w, ws.h, ws.w, o, oh, ow, dx);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> channelwise_highpass(const Tensor<T>& input, const Tensor<T>& filters) {
    const Shape xs = input.shape();
    const Shape fs = filters.shape();
    if (fs.c != 1 || fs.h % 2 == 0 || fs.w % 2 == 0) {
        throw ShapeError("channelwise_highpass: filters must be [m, 1, k, k] with odd k, got " + fs.str());
    }
    const std::size_t m = fs.n;
    const std::size_t taps = fs.h * fs.w;
    const T* f = filters.data().data();
    std::vector<T> centre(m, T(0));
    for (std::size_t j = 0; j < m; ++j) {
        double total = 0.0, mag = 0.0;
        for (std::size_t t = 0; t < taps; ++t) {
            centre[j] += f[j * taps + t];
            total += f[j * taps + t];
            mag += std::abs(static_cast<double>(f[j * taps + t]));
        }
        if (std::abs(total) > 1e-6 * std::max(mag, 1.0)) {
            throw std::invalid_argument("channelwise_highpass: filter " + std::to_string(j) +
                                        " coefficients do not sum to zero");
        }
    }

    const std::size_t h = xs.h, w = xs.w;
    const std::size_t ry = fs.h / 2, rx = fs.w / 2;
    const std::size_t ph = h + 2 * ry, pw = w + 2 * rx;
    // Edge-replicated copy of one plane.
    auto pad_plane = [=](const T* src, std::vector<T>& dst) {
        dst.resize(ph * pw);
        for (std::size_t y = 0; y < ph; ++y) {
            const std::size_t sy = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(ry), 0,
                                                              static_cast<std::ptrdiff_t>(h) - 1);
            for (std::size_t x = 0; x < pw; ++x) {
                const std::size_t sx = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x) - static_cast<std::ptrdiff_t>(rx), 0,
                                                                  static_cast<std::ptrdiff_t>(w) - 1);
                dst[y * pw + x] = src[sy * w + sx];
            }
        }
    };

    Tensor<T> out(Shape{xs.n, xs.c * m, h, w});
    std::vector<T> padded;
    for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
        const T* src = input.data().data() + p * h * w;
        pad_plane(src, padded);
        for (std::size_t j = 0; j < m; ++j) {
            T* dst = out.mutable_data().data() + (p * m + j) * h * w;
            for (std::size_t ki = 0; ki < fs.h; ++ki) {
                for (std::size_t kj = 0; kj < fs.w; ++kj) {
                    const T coef = f[j * taps + ki * fs.w + kj];
                    if (coef == T(0)) continue;
                    for (std::size_t y = 0; y < h; ++y) {
                        const T* row = padded.data() + (y + ki) * pw + kj;
                        const T* ctr = src + y * w;
                        T* o = dst + y * w;
                        for (std::size_t x = 0; x < w; ++x) o[x] += coef * (row[x] - ctr[x]);
                    }
                }
            }
        }
    }

    if (Graph<T>* g = recorder<T>({&input})) {
        ImplPtr<T> xi = input.handle(), fi = filters.handle(), yi = out.handle();
        g->record("channelwise_highpass", {xi}, yi, [xi, fi, yi, centre, m, ry, rx]() {
            const Shape xs = xi->shape;
            const Shape fs = fi->shape;
            const std::size_t h = xs.h, w = xs.w, taps = fs.h * fs.w;
            const std::size_t ph = h + 2 * ry, pw = w + 2 * rx;
            const T* f = fi->data.data();
            xi->ensure_grad();
            std::vector<T> dpad(ph * pw);
            for (std::size_t p = 0; p < xs.n * xs.c; ++p) {
                T* dx = xi->grad.data() + p * h * w;
                std::fill(dpad.begin(), dpad.end(), T(0));
                for (std::size_t j = 0; j < m; ++j) {
                    const T* go = yi->grad.data() + (p * m + j) * h * w;
                    for (std::size_t ki = 0; ki < fs.h; ++ki) {
                        for (std::size_t kj = 0; kj < fs.w; ++kj) {
                            const T coef = f[j * taps + ki * fs.w + kj];
                            if (coef == T(0)) continue;
                            for (std::size_t y = 0; y < h; ++y) {
                                T* row = dpad.data() + (y + ki) * pw + kj;
                                const T* gr = go + y * w;
                                for (std::size_t x = 0; x < w; ++x) row[x] += coef * gr[x];
                            }
                        }
                    }
                    const T c = centre[j];
                    for (std::size_t i = 0; i < h * w; ++i) dx[i] -= c * go[i];
                }
                for (std::size_t y = 0; y < ph; ++y) {
                    const std::size_t sy = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(ry), 0,
                                                                      static_cast<std::ptrdiff_t>(h) - 1);
                    for (std::size_t x = 0; x < pw; ++x) {
                        const std::size_t sx = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x) - static_cast<std::ptrdiff_t>(rx), 0,
                                                                          static_cast<std::ptrdiff_t>(w) - 1);
                        dx[sy * w + sx] += dpad[y * pw + x];
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto src = x.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
    if (Graph<T>* g = recorder<T>({&x})) {
        ImplPtr<T> xi = x.handle(), yi = out.handle();
        g->record("relu", {xi}, yi, [xi, yi]() {
            xi->ensure_grad();
            for (std::size_t i = 0; i < xi->data.size(); ++i) {
                if (xi->data[i] > T(0)) xi->grad[i] += yi->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto src = x.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const T v = src[i];
        T y;
        if (v >= T(0)) {
            y = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            y = e / (T(1) + e);
        }
        // keep saturated values inside the open interval (0, 1)
        dst[i] = std::clamp(y, std::numeric_limits<T>::min(), T(1) - std::numeric_limits<T>::epsilon() / 2);
    }
    if (Graph<T>* g = recorder<T>({&x})) {
        ImplPtr<T> xi = x.handle(), yi = out.handle();
        g->record("sigmoid", {xi}, yi, [xi, yi]() {
            xi->ensure_grad();
            for (std::size_t i = 0; i < yi->data.size(); ++i) {
                const T s = yi->data[i];
                xi->grad[i] += yi->grad[i] * s * (T(1) - s);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
    const Shape s = x.shape();
    const std::size_t oh = (s.h + 1) / 2;
    const std::size_t ow = (s.w + 1) / 2;
    Tensor<T> out(Shape{s.n, s.c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    const T* src = x.data().data();
    T* dst = out.mutable_data().data();
    std::size_t k = 0;
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const std::size_t base = p * s.h * s.w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox, ++k) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t where = base + 2 * oy * s.w + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    const std::size_t iy = 2 * oy + dy;
                    if (iy >= s.h) continue;
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t ix = 2 * ox + dx;
                        if (ix >= s.w) continue;
                        const std::size_t idx = base + iy * s.w + ix;
                        if (src[idx] > best) {
                            best = src[idx];
                            where = idx;
                        }
                    }
                }
                dst[k] = best;
                (*argmax)[k] = where;
            }
        }
    }
    if (Graph<T>* g = recorder<T>({&x})) {
        ImplPtr<T> xi = x.handle(), yi = out.handle();
        g->record("maxpool2d", {xi}, yi, [xi, yi, argmax]() {
            xi->ensure_grad();
            for (std::size_t i = 0; i < argmax->size(); ++i) xi->grad[(*argmax)[i]] += yi->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
    if (factor == 0) throw ShapeError("upsample_nearest: factor must be positive");
    const Shape s = x.shape();
    const std::size_t oh = s.h * factor;
    const std::size_t ow = s.w * factor;
    Tensor<T> out(Shape{s.n, s.c, oh, ow});
    const T* src = x.data().data();
    T* dst = out.mutable_data().data();
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            const T* row = src + (p * s.h + oy / factor) * s.w;
            T* o = dst + (p * oh + oy) * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) o[ox] = row[ox / factor];
        }
    }
    if (Graph<T>* g = recorder<T>({&x})) {
        ImplPtr<T> xi = x.handle(), yi = out.handle();
        g->record("upsample_nearest", {xi}, yi, [xi, yi, factor]() {
            xi->ensure_grad();
            const Shape s = xi->shape;
            const std::size_t oh = s.h * factor;
            const std::size_t ow = s.w * factor;
            for (std::size_t p = 0; p < s.n * s.c; ++p) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    T* row = xi->grad.data() + (p * s.h + oy / factor) * s.w;
                    const T* go = yi->grad.data() + (p * oh + oy) * ow;
                    for (std::size_t ox = 0; ox < ow; ++ox) row[ox / factor] += go[ox];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    if (sa.n != sb.n) throw ShapeError("concat_channels: batch mismatch " + sa.str() + " vs " + sb.str());
    if (sa.h != sb.h) throw ShapeError("concat_channels: height mismatch " + sa.str() + " vs " + sb.str());
    if (sa.w != sb.w) throw ShapeError("concat_channels: width mismatch " + sa.str() + " vs " + sb.str());
    const std::size_t plane = sa.h * sa.w;
    Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
    T* dst = out.mutable_data().data();
    for (std::size_t n = 0; n < sa.n; ++n) {
        const T* pa = a.data().data() + n * sa.c * plane;
        const T* pb = b.data().data() + n * sb.c * plane;
        T* o = dst + n * (sa.c + sb.c) * plane;
        std::copy(pa, pa + sa.c * plane, o);
        std::copy(pb, pb + sb.c * plane, o + sa.c * plane);
    }
    if (Graph<T>* g = recorder<T>({&a, &b})) {
        ImplPtr<T> ai = a.handle(), bi = b.handle(), yi = out.handle();
        g->record("concat_channels", {ai, bi}, yi, [ai, bi, yi]() {
            const Shape sa = ai->shape;
            const Shape sb = bi->shape;
            const std::size_t plane = sa.h * sa.w;
            if (ai->requires_grad) ai->ensure_grad();
            if (bi->requires_grad) bi->ensure_grad();
            for (std::size_t n = 0; n < sa.n; ++n) {
                const T* go = yi->grad.data() + n * (sa.c + sb.c) * plane;
                if (ai->requires_grad) {
                    T* ga = ai->grad.data() + n * sa.c * plane;
                    for (std::size_t i = 0; i < sa.c * plane; ++i) ga[i] += go[i];
                }
                if (bi->requires_grad) {
                    T* gb = bi->grad.data() + n * sb.c * plane;
                    for (std::size_t i = 0; i < sb.c * plane; ++i) gb[i] += go[sa.c * plane + i];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    auto pa = a.data();
    auto pb = b.data();
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] + pb[i];
    if (Graph<T>* g = recorder<T>({&a, &b})) {
        ImplPtr<T> ai = a.handle(), bi = b.handle(), yi = out.handle();
        g->record("add", {ai, bi}, yi, [ai, bi, yi]() {
            for (auto* in : {ai.get(), bi.get()}) {
                if (!in->requires_grad) continue;
                in->ensure_grad();
                for (std::size_t i = 0; i < yi->grad.size(); ++i) in->grad[i] += yi->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& s, const Tensor<T>& x) {
    if (s.numel() != 1) throw ShapeError("scale: factor must have one element, got " + s.shape().str());
    const T k = s.data()[0];
    Tensor<T> out(x.shape());
    auto src = x.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = k * src[i];
    if (Graph<T>* g = recorder<T>({&s, &x})) {
        ImplPtr<T> si = s.handle(), xi = x.handle(), yi = out.handle();
        g->record("scale", {si, xi}, yi, [si, xi, yi]() {
            if (si->requires_grad) {
                si->ensure_grad();
                T acc = 0;
                for (std::size_t i = 0; i < xi->data.size(); ++i) acc += xi->data[i] * yi->grad[i];
                si->grad[0] += acc;
            }
            if (xi->requires_grad) {
                xi->ensure_grad();
                const T k = si->data[0];
                for (std::size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += k * yi->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T factor) {
    Tensor<T> out(x.shape());
    auto src = x.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = factor * src[i];
    if (Graph<T>* g = recorder<T>({&x})) {
        ImplPtr<T> xi = x.handle(), yi = out.handle();
        g->record("mul_scalar", {xi}, yi, [xi, yi, factor]() {
            xi->ensure_grad();
            for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += factor * yi->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape.numel() != x.numel()) {
        throw ShapeError("reshape: cannot view " + x.shape().str() + " as " + shape.str());
    }
    Tensor<T> out(shape, std::vector<T>(x.data().begin(), x.data().end()));
    if (Graph<T>* g = recorder<T>({&x})) {
        ImplPtr<T> xi = x.handle(), yi = out.handle();
        g->record("reshape", {xi}, yi, [xi, yi]() {
            xi->ensure_grad();
            for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += yi->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    if (sa.c != 1 || sb.c != 1) {
        throw ShapeError("matmul: operands must be [n, 1, rows, cols], got " + sa.str() + " and " + sb.str());
    }
    if (sa.n != sb.n) throw ShapeError("matmul: batch mismatch " + sa.str() + " vs " + sb.str());
    const std::size_t m = ta ? sa.w : sa.h;
    const std::size_t k = ta ? sa.h : sa.w;
    const std::size_t kb = tb ? sb.w : sb.h;
    const std::size_t p = tb ? sb.h : sb.w;
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(k) + " vs " +
                         std::to_string(kb) + ")");
    }
    Tensor<T> out(Shape{sa.n, 1, m, p});
    const std::size_t asz = sa.h * sa.w, bsz = sb.h * sb.w, csz = m * p;
    for (std::size_t n = 0; n < sa.n; ++n) {
        gemm<T>(ta, tb, m, p, k, T(1), a.data().data() + n * asz, sa.w, b.data().data() + n * bsz, sb.w, T(0),
                out.mutable_data().data() + n * csz, p);
    }
    if (Graph<T>* g = recorder<T>({&a, &b})) {
        ImplPtr<T> ai = a.handle(), bi = b.handle(), yi = out.handle();
        g->record("matmul", {ai, bi}, yi, [ai, bi, yi, ta, tb, m, k, p]() {
            const Shape sa = ai->shape;
            const Shape sb = bi->shape;
            const std::size_t asz = sa.h * sa.w, bsz = sb.h * sb.w, csz = m * p;
            if (ai->requires_grad) ai->ensure_grad();
            if (bi->requires_grad) bi->ensure_grad();
            for (std::size_t n = 0; n < sa.n; ++n) {
                const T* dc = yi->grad.data() + n * csz;
                const T* av = ai->data.data() + n * asz;
                const T* bv = bi->data.data() + n * bsz;
                if (ai->requires_grad) {
                    T* da = ai->grad.data() + n * asz;
                    if (!ta) {
                        // dA = dC * op(B)^T, A stored m x k
                        gemm<T>(false, !tb, m, k, p, T(1), dc, p, bv, sb.w, T(1), da, k);
                    } else {
                        // A stored k x m: dA = op(B) * dC^T
                        gemm<T>(tb, true, k, m, p, T(1), bv, sb.w, dc, p, T(1), da, m);
                    }
                }
                if (bi->requires_grad) {
                    T* db = bi->grad.data() + n * bsz;
                    if (!tb) {
                        // dB = op(A)^T * dC, B stored k x p
                        gemm<T>(!ta, false, k, p, m, T(1), av, sa.w, dc, p, T(1), db, p);
                    } else {
                        // B stored p x k: dB = dC^T * op(A)
                        gemm<T>(true, ta, p, k, m, T(1), dc, p, av, sa.w, T(1), db, k);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (Graph<T>* g = recorder<T>({&x})) {
        ImplPtr<T> xi = x.handle(), yi = out.handle();
        g->record("sum", {xi}, yi, [xi, yi]() {
            xi->ensure_grad();
            const T go = yi->grad[0];
            for (auto& v : xi->grad) v += go;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    check_same_shape("bce_loss", pred, target);
    auto p = pred.data();
    auto y = target.data();
    const T lo = static_cast<T>(kBceClamp);
    const T hi = T(1) - lo;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (y[i] != T(0) && y[i] != T(1)) {
            throw std::invalid_argument("bce_loss: target value " + std::to_string(static_cast<double>(y[i])) +
                                        " at index " + std::to_string(i) + " is not binary");
        }
        const double pc = std::clamp(static_cast<double>(p[i]), static_cast<double>(lo), static_cast<double>(hi));
        acc -= y[i] == T(1) ? std::log(pc) : std::log1p(-pc);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(p.size())));
    if (Graph<T>* g = recorder<T>({&pred})) {
        ImplPtr<T> pi = pred.handle(), ti = target.handle(), yi = out.handle();
        g->record("bce_loss", {pi}, yi, [pi, ti, yi, lo, hi]() {
            pi->ensure_grad();
            const T factor = yi->grad[0] / static_cast<T>(pi->data.size());
            for (std::size_t i = 0; i < pi->data.size(); ++i) {
                const T v = pi->data[i];
                if (v < lo || v > hi) continue;
                const T d = ti->data[i] == T(1) ? -T(1) / v : T(1) / (T(1) - v);
                pi->grad[i] += factor * d;
            }
        });
    }
    return out;
}

#define FORGELOC_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dOptions); \
    template Tensor<T> channelwise_highpass(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> relu(const Tensor<T>&);                                                       \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                    \
    template Tensor<T> maxpool2d(const Tensor<T>&);                                                  \
    template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t);                              \
    template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> scale(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> mul_scalar(const Tensor<T>&, T);                                              \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);                       \
    template Tensor<T> sum(const Tensor<T>&);                                                        \
    template Tensor<T> mean(const Tensor<T>&);                                                       \
    template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&);

FORGELOC_INSTANTIATE_OPS(float)
FORGELOC_INSTANTIATE_OPS(double)

#undef FORGELOC_INSTANTIATE_OPS

}  // namespace forgeloc
