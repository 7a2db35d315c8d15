#include "forgeloc/attention.hpp"

namespace forgeloc {

namespace {

template <typename T>
Tensor<T> as_matrix(const Tensor<T>& x) {
    const Shape s = x.shape();
    return reshape(x, Shape{s.n, 1, s.c, s.h * s.w});
}

template <typename T>
Tensor<T> learnable_zero() {
    Tensor<T> s = Tensor<T>::scalar(T(0));
    s.set_requires_grad(true);
    return s;
}

}  // namespace

template <typename T>
SpatialAttentionBranch<T>::SpatialAttentionBranch(std::size_t channels, Rng& rng)
    : noise_conv(HpfKernelBank<T>::expanded_channels(channels), channels, 1, 1, rng),
      key(channels, channels, 1, 1, rng),
      query(channels, channels, 1, 1, rng),
      value(channels, channels, 1, 1, rng),
      scale(learnable_zero<T>()) {}

template <typename T>
Tensor<T> SpatialAttentionBranch<T>::forward(const Tensor<T>& f, AttentionTrace<T>* trace) const {
    const Tensor<T> noise = noise_conv(cw_hpf(f, bank_));
    // Natural layout of each map is C x (h*w), i.e. the transpose of F'_i.
    const Tensor<T> k = as_matrix(key(noise));
    const Tensor<T> q = as_matrix(query(noise));
    const Tensor<T> v = as_matrix(value(noise));
    const Tensor<T> sam = sigmoid(matmul(q, k, true, false));
    // (SAM F3')^T = F3'^T SAM^T
    const Tensor<T> weighted = reshape(matmul(v, sam, false, true), f.shape());
    if (trace) {
        trace->spatial_matrix = sam;
        trace->spatial_term = weighted;
    }
    return add(forgeloc::scale(scale, weighted), f);
}

template <typename T>
void SpatialAttentionBranch<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    noise_conv.collect(out, prefix + ".noise");
    key.collect(out, prefix + ".key");
    query.collect(out, prefix + ".query");
    value.collect(out, prefix + ".value");
    out.push_back({prefix + ".scale", scale});
}

template <typename T>
ChannelAttentionBranch<T>::ChannelAttentionBranch(std::size_t channels, Rng& rng)
    : noise_conv(HpfKernelBank<T>::expanded_channels(channels), channels, 1, 1, rng),
      scale(learnable_zero<T>()) {}

template <typename T>
Tensor<T> ChannelAttentionBranch<T>::forward(const Tensor<T>& f, AttentionTrace<T>* trace) const {
    const Tensor<T> x = as_matrix(noise_conv(cw_hpf(f, bank_)));
    const Tensor<T> cam = sigmoid(matmul(x, x, false, true));
    // (F'_R CAM)^T = CAM^T F'_R^T
    const Tensor<T> weighted = reshape(matmul(cam, x, true, false), f.shape());
    if (trace) {
        trace->channel_matrix = cam;
        trace->channel_term = weighted;
    }
    return add(forgeloc::scale(scale, weighted), f);
}

template <typename T>
void ChannelAttentionBranch<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    noise_conv.collect(out, prefix + ".noise");
    out.push_back({prefix + ".scale", scale});
}

template <typename T>
ForgeryAttention<T>::ForgeryAttention(std::size_t channels, Rng& rng)
    : spatial(channels, rng), channel(channels, rng), fuse(channels, channels, 1, 1, rng) {}

template <typename T>
Tensor<T> ForgeryAttention<T>::forward(const Tensor<T>& f, AttentionTrace<T>* trace) const {
    if (f.shape().c != channels()) {
        throw ShapeError("forgery attention: expected " + std::to_string(channels()) + " channels, got " +
                         f.shape().str());
    }
    return fuse(add(spatial.forward(f, trace), channel.forward(f, trace)));
}

template <typename T>
void ForgeryAttention<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    spatial.collect(out, prefix + ".spatial");
    channel.collect(out, prefix + ".channel");
    fuse.collect(out, prefix + ".fuse");
}

template class SpatialAttentionBranch<float>;
template class SpatialAttentionBranch<double>;
template class ChannelAttentionBranch<float>;
template class ChannelAttentionBranch<double>;
template class ForgeryAttention<float>;
template class ForgeryAttention<double>;

}  // namespace forgeloc
