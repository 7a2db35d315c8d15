#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forgeloc/tensor.hpp"

namespace forgeloc {

template <typename T>
struct NamedParameter {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

struct AdamOptions {
    double lr = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are kept per parameter in the
/// parameter's own precision.
template <typename T>
class Adam {
public:
    explicit Adam(ParameterList<T> params, AdamOptions options = {});

    /// Applies one update from the parameters' accumulated gradients.
    /// Rejects non-finite gradients before touching any parameter.
    void step();
    void zero_grad();

    std::uint64_t step_count() const { return step_count_; }
    const AdamOptions& options() const { return options_; }
    const ParameterList<T>& parameters() const { return params_; }

    const std::vector<std::vector<T>>& first_moments() const { return m_; }
    const std::vector<std::vector<T>>& second_moments() const { return v_; }

    /// Reinstates a saved optimizer state; buffer sizes must match.
    void restore(std::uint64_t step_count, std::vector<std::vector<T>> first,
                 std::vector<std::vector<T>> second);

private:
    ParameterList<T> params_;
    AdamOptions options_;
    std::uint64_t step_count_ = 0;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace forgeloc
