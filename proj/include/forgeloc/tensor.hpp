#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace forgeloc {

/// Rank-4 shape in [batch, channels, height, width] order.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    std::size_t numel() const { return n * c * h * w; }
    std::size_t plane() const { return h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool is_leaf = true;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

}  // namespace detail

/// Dense rank-4 tensor with shared ownership of its storage.
///
/// Copies of a Tensor alias the same buffer; use clone() or detach() for an
/// independent value. Gradients accumulate into leaves until zero_grad().
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);

    static Tensor zeros(Shape shape) { return Tensor(shape); }
    static Tensor scalar(T value) { return Tensor(Shape{1, 1, 1, 1}, value); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl().shape; }
    std::size_t numel() const { return impl().data.size(); }

    std::span<const T> data() const { return impl().data; }
    /// Direct write access. Intended for leaves (parameter updates, inputs).
    std::span<T> mutable_data() { return impl().data; }

    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;
    T item() const;

    bool requires_grad() const { return impl().requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const { return impl().is_leaf; }

    /// Accumulated gradient; zeros when nothing has been accumulated yet.
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    bool has_grad() const { return !impl().grad.empty(); }
    void zero_grad();

    Tensor clone() const;
    Tensor detach() const { return clone(); }

    /// Identity of the underlying storage.
    const void* id() const { return impl_.get(); }

    // Engine-internal access.
    detail::TensorImpl<T>& impl() const;
    const std::shared_ptr<detail::TensorImpl<T>>& handle() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl<T>> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl<T>> impl_;
};

class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Tape of recorded operations for reverse-mode differentiation.
///
/// Constructing a Graph makes it the active recorder for the calling thread
/// (scoped, nestable); ops executed while no graph is active record nothing.
/// backward() replays the tape in exact reverse recording order and may run
/// only once per graph.
template <typename T>
class Graph {
public:
    using Impl = detail::TensorImpl<T>;
    using BackwardFn = std::function<void()>;

    Graph();
    ~Graph();
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    static Graph* active();

    void record(const char* kind, std::vector<std::shared_ptr<Impl>> inputs,
                std::shared_ptr<Impl> output, BackwardFn backward);

    void backward(const Tensor<T>& loss);

    std::size_t size() const { return records_.size(); }
    bool consumed() const { return consumed_; }
    std::vector<std::string> kinds() const;

private:
    struct Record {
        const char* kind;
        std::vector<std::shared_ptr<Impl>> inputs;
        std::shared_ptr<Impl> output;
        BackwardFn backward;
    };

    std::vector<Record> records_;
    bool consumed_ = false;
    Graph* previous_ = nullptr;
};

/// Temporarily turns off recording on this thread.
template <typename T>
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Graph<T>* saved_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;
extern template class NoGradScope<float>;
extern template class NoGradScope<double>;

}  // namespace forgeloc
