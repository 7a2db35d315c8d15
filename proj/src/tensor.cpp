#include "forgeloc/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace forgeloc {

std::string Shape::str() const {
    std::ostringstream os;
    os << '[' << n << ", " << c << ", " << h << ", " << w << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    impl_->shape = shape;
    impl_->data.assign(shape.numel(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    if (values.size() != shape.numel()) {
        throw ShapeError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape.str());
    }
    impl_->shape = shape;
    impl_->data = std::move(values);
}

template <typename T>
detail::TensorImpl<T>& Tensor<T>::impl() const {
    if (!impl_) throw std::logic_error("use of an undefined tensor");
    return *impl_;
}

template <typename T>
T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    const Shape& s = shape();
    return impl().data[((n * s.c + c) * s.h + h) * s.w + w];
}

template <typename T>
T Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = shape();
    return impl().data[((n * s.c + c) * s.h + h) * s.w + w];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return impl().data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    impl().requires_grad = on;
    return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    impl().ensure_grad();
    return impl().grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
    impl().ensure_grad();
    return impl().grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
    auto& g = impl().grad;
    std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    Tensor out(shape(), std::vector<T>(impl().data));
    return out;
}

namespace {

template <typename T>
Graph<T>*& active_graph() {
    thread_local Graph<T>* current = nullptr;
    return current;
}

}  // namespace

template <typename T>
Graph<T>::Graph() : previous_(active_graph<T>()) {
    active_graph<T>() = this;
}

template <typename T>
Graph<T>::~Graph() {
    if (active_graph<T>() == this) active_graph<T>() = previous_;
}

template <typename T>
Graph<T>* Graph<T>::active() {
    return active_graph<T>();
}

template <typename T>
void Graph<T>::record(const char* kind, std::vector<std::shared_ptr<Impl>> inputs,
                      std::shared_ptr<Impl> output, BackwardFn backward) {
    if (consumed_) throw GraphError("cannot record into a graph that already ran backward");
    output->is_leaf = false;
    output->requires_grad = true;
    records_.push_back(Record{kind, std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
    if (consumed_) {
        throw GraphError("backward() called twice on the same graph; record a new forward pass first");
    }
    if (loss.numel() != 1) {
        throw GraphError("backward() needs a scalar loss, got shape " + loss.shape().str());
    }
    const auto* target = &loss.impl();
    std::size_t end = records_.size();
    while (end > 0 && records_[end - 1].output.get() != target) --end;
    if (end == 0) throw GraphError("loss tensor was not produced inside this graph");

    for (std::size_t i = 0; i < end; ++i) {
        auto& out = *records_[i].output;
        out.grad.assign(out.data.size(), T(0));
        for (auto& in : records_[i].inputs) {
            if (in->is_leaf && in->requires_grad) in->ensure_grad();
        }
    }
    records_[end - 1].output->grad[0] = T(1);

    for (std::size_t i = end; i-- > 0;) {
        records_[i].backward();
        records_[i].output->grad.clear();
        records_[i].output->grad.shrink_to_fit();
    }
    consumed_ = true;
}

template <typename T>
std::vector<std::string> Graph<T>::kinds() const {
    std::vector<std::string> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.emplace_back(r.kind);
    return out;
}

template <typename T>
NoGradScope<T>::NoGradScope() : saved_(active_graph<T>()) {
    active_graph<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
    active_graph<T>() = saved_;
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;

}  // namespace forgeloc
