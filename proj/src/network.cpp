#include "forgeloc/network.hpp"

#include <stdexcept>

namespace forgeloc {

void ModelConfig::validate() const {
    if (nbf < 4) throw std::invalid_argument("model config: nbf must be at least 4");
    if (k < 1) throw std::invalid_argument("model config: k must be at least 1");
    if (convs_per_block < 1) throw std::invalid_argument("model config: convs_per_block must be at least 1");
    if (input_channels < 1) throw std::invalid_argument("model config: input_channels must be at least 1");
    if (height == 0 || height % 4 != 0) {
        throw std::invalid_argument("model config: height " + std::to_string(height) + " is not divisible by 4");
    }
    if (width == 0 || width % 4 != 0) {
        throw std::invalid_argument("model config: width " + std::to_string(width) + " is not divisible by 4");
    }
}

std::size_t ModelConfig::block_filters(std::size_t i) const {
    if (i < 1 || i > 5) throw std::out_of_range("VGG block index must be in 1..5");
    return i <= 3 ? nbf << i : nbf << (5 - i);
}

template <typename T>
VggBlock<T>::VggBlock(std::size_t in_channels, std::size_t filters, std::size_t depth, Rng& rng) {
    convs_.reserve(depth);
    for (std::size_t i = 0; i < depth; ++i) convs_.emplace_back(i == 0 ? in_channels : filters, filters, 3, 1, rng);
}

template <typename T>
Tensor<T> VggBlock<T>::forward(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (const auto& conv : convs_) h = relu(conv(h));
    return h;
}

template <typename T>
void VggBlock<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(out, prefix + "." + std::to_string(i));
}

template <typename T>
DilatedModule<T>::DilatedModule(std::size_t channels, Rng& rng) {
    for (std::size_t rate : kBridgeDilations) convs_.emplace_back(channels, channels, 3, rate, rng);
}

template <typename T>
Tensor<T> DilatedModule<T>::forward(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (const auto& conv : convs_) h = relu(conv(h));
    return h;
}

template <typename T>
void DilatedModule<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(out, prefix + "." + std::to_string(i));
}

template <typename T>
SubNet<T>::SubNet(const ModelConfig& config, std::size_t in_channels, FrontEnd front, bool with_attention,
                  std::size_t feature_channels, Rng& rng)
    : in_channels_(in_channels), front_(front) {
    const std::size_t depth = config.convs_per_block;
    const std::size_t f1 = config.block_filters(1), f2 = config.block_filters(2), f3 = config.block_filters(3),
                      f4 = config.block_filters(4), f5 = config.block_filters(5);
    blocks_[0] = VggBlock<T>(front_end_channels(front, in_channels), f1, depth, rng);
    blocks_[1] = VggBlock<T>(f1, f2, depth, rng);
    blocks_[2] = VggBlock<T>(f2, f3, depth, rng);
    bridge_ = DilatedModule<T>(f3, rng);
    if (with_attention) attention_.emplace(f3, rng);
    blocks_[3] = VggBlock<T>(f3, f4, depth, rng);
    blocks_[4] = VggBlock<T>(f4 + f2, f5, depth, rng);
    mask_head_ = ConvLayer<T>(f5 + f1, 1, kMaskHeadKernel, 1, rng);
    if (feature_channels > 0) feature_head_.emplace(f5 + f1, feature_channels, 1, 1, rng);
}

template <typename T>
typename SubNet<T>::Output SubNet<T>::forward(const Tensor<T>& x, ModelTrace<T>* trace) const {
    if (x.shape().c != in_channels_) {
        throw ShapeError("sub-network expects " + std::to_string(in_channels_) + " input channels, got " +
                         x.shape().str());
    }
    const Tensor<T> noise = apply_front_end(front_, x, bank_);
    if (trace && !trace->front_noise.defined()) trace->front_noise = noise;

    const Tensor<T> v1 = blocks_[0].forward(noise);
    const Tensor<T> v2 = blocks_[1].forward(maxpool2d(v1));
    const Tensor<T> v3 = blocks_[2].forward(maxpool2d(v2));
    Tensor<T> mid = bridge_.forward(v3);
    if (attention_) mid = attention_->forward(mid, trace ? &trace->attention : nullptr);
    const Tensor<T> v4 = blocks_[3].forward(mid);
    const Tensor<T> v5 = blocks_[4].forward(concat_channels(upsample_nearest(v4), v2));
    const Tensor<T> top = concat_channels(upsample_nearest(v5), v1);

    Output out;
    out.mask = sigmoid(mask_head_(top));
    if (feature_head_) out.features = (*feature_head_)(top);
    return out;
}

template <typename T>
void SubNet<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < 3; ++i) blocks_[i].collect(out, prefix + ".v" + std::to_string(i + 1));
    bridge_.collect(out, prefix + ".bridge");
    if (attention_) attention_->collect(out, prefix + ".attention");
    for (std::size_t i = 3; i < 5; ++i) blocks_[i].collect(out, prefix + ".v" + std::to_string(i + 1));
    mask_head_.collect(out, prefix + ".mask_head");
    if (feature_head_) feature_head_->collect(out, prefix + ".feature_head");
}

template <typename T>
CoarseToFineModel<T>::CoarseToFineModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(derive_seed(seed, "model-init"));
    if (config_.coarse_to_fine) {
        first_ = SubNet<T>(config_, config_.input_channels, config_.coarse_front, false, config_.k, rng);
        second_ = SubNet<T>(config_, config_.k, config_.refined_front, config_.attention, 0, rng);
    } else {
        first_ = SubNet<T>(config_, config_.input_channels, config_.coarse_front, config_.attention, 0, rng);
    }
}

template <typename T>
void CoarseToFineModel<T>::check_image(const Tensor<T>& image) const {
    const Shape s = image.shape();
    if (s.c != config_.input_channels) {
        throw ShapeError("model expects " + std::to_string(config_.input_channels) + " image channels, got " +
                         s.str());
    }
    if (s.h % 4 != 0) throw ShapeError("image height " + std::to_string(s.h) + " is not divisible by 4");
    if (s.w % 4 != 0) throw ShapeError("image width " + std::to_string(s.w) + " is not divisible by 4");
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> CoarseToFineModel<T>::coarse_forward(const Tensor<T>& image,
                                                                     ModelTrace<T>* trace) const {
    if (!config_.coarse_to_fine) throw std::logic_error("coarse_forward on a single-stage model");
    check_image(image);
    auto out = first_.forward(image, trace);
    return {out.mask, out.features};
}

template <typename T>
Tensor<T> CoarseToFineModel<T>::refined_forward(const Tensor<T>& features, ModelTrace<T>* trace) const {
    if (!config_.coarse_to_fine) throw std::logic_error("refined_forward on a single-stage model");
    if (features.shape().c != config_.k) {
        throw ShapeError("refined net expects k=" + std::to_string(config_.k) + " feature channels, got " +
                         features.shape().str());
    }
    return second_.forward(features, trace).mask;
}

template <typename T>
ModelOutput<T> CoarseToFineModel<T>::forward(const Tensor<T>& image, ModelTrace<T>* trace) const {
    ModelOutput<T> out;
    if (config_.coarse_to_fine) {
        auto [coarse, features] = coarse_forward(image, trace);
        out.coarse_mask = coarse;
        out.features = features;
        out.mask = refined_forward(features, trace);
    } else {
        check_image(image);
        out.mask = first_.forward(image, trace).mask;
    }
    return out;
}

template <typename T>
ParameterList<T> CoarseToFineModel<T>::parameters() const {
    ParameterList<T> out;
    if (config_.coarse_to_fine) {
        first_.collect(out, "coarse");
        second_.collect(out, "refined");
    } else {
        first_.collect(out, "net");
    }
    return out;
}

template <typename T>
std::size_t CoarseToFineModel<T>::parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : parameters()) total += p.tensor.numel();
    return total;
}

template class VggBlock<float>;
template class VggBlock<double>;
template class DilatedModule<float>;
template class DilatedModule<double>;
template class SubNet<float>;
template class SubNet<double>;
template class CoarseToFineModel<float>;
template class CoarseToFineModel<double>;

}  // namespace forgeloc
