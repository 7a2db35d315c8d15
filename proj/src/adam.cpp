#include "forgeloc/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace forgeloc {

template <typename T>
Adam<T>::Adam(ParameterList<T> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    if (!(options_.lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), T(0));
        v_.emplace_back(p.tensor.numel(), T(0));
    }
}

template <typename T>
void Adam<T>::step() {
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        auto g = p.tensor.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw std::runtime_error("adam_step: non-finite gradient in parameter '" + p.name + "' at index " +
                                         std::to_string(i));
            }
        }
    }
    ++step_count_;
    const T b1 = static_cast<T>(options_.beta1);
    const T b2 = static_cast<T>(options_.beta2);
    const T lr = static_cast<T>(options_.lr);
    const T eps = static_cast<T>(options_.eps);
    const T c1 = static_cast<T>(1.0 - std::pow(options_.beta1, static_cast<double>(step_count_)));
    const T c2 = static_cast<T>(1.0 - std::pow(options_.beta2, static_cast<double>(step_count_)));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor<T> param = params_[k].tensor;
        if (!param.has_grad()) continue;
        auto g = param.grad();
        auto w = param.mutable_data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = m[i] / c1;
            const T vhat = v[i] / c2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) {
        if (p.tensor.has_grad()) p.tensor.zero_grad();
    }
}

template <typename T>
void Adam<T>::restore(std::uint64_t step_count, std::vector<std::vector<T>> first,
                      std::vector<std::vector<T>> second) {
    if (first.size() != params_.size() || second.size() != params_.size()) {
        throw std::invalid_argument("adam: restored state has wrong parameter count");
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
        if (first[k].size() != params_[k].tensor.numel() || second[k].size() != params_[k].tensor.numel()) {
            throw std::invalid_argument("adam: restored moments for '" + params_[k].name + "' have wrong size");
        }
    }
    step_count_ = step_count;
    m_ = std::move(first);
    v_ = std::move(second);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace forgeloc
