#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace swae {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class BasicTensor;

/// One recorded operation. `backward` maps the gradient of the node's output
/// to gradients of each input (an empty vector means "no gradient flows").
template <typename T>
struct TapeNode {
    using Grads = std::vector<std::vector<T>>;

    std::uint64_t seq = 0;  // forward execution order within the thread
    std::string_view op_kind;
    std::vector<BasicTensor<T>> inputs;
    std::function<Grads(const std::vector<T>&)> backward;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    bool on_sphere = false;  // derived from a sphere projection
    std::shared_ptr<TapeNode<T>> node;
};

/// Dense row-major tensor handle. Copies share storage, like a reference.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor();
    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, T value, bool requires_grad = false);
    static BasicTensor scalar(T value);

    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    std::vector<T>& values() { return impl_->data; }
    const std::vector<T>& values() const { return impl_->data; }
    T item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }
    bool has_grad() const { return !impl_->grad.empty(); }
    /// Accumulated gradient; zeros when nothing has been accumulated.
    std::vector<T> grad() const;
    std::vector<T>& grad_buffer() { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    bool is_leaf() const { return !impl_->node; }
    /// True when an op on this tensor should be recorded.
    bool tracked() const { return impl_->requires_grad || impl_->node != nullptr; }
    const std::shared_ptr<TapeNode<T>>& node() const { return impl_->node; }
    void set_node(std::shared_ptr<TapeNode<T>> node) { impl_->node = std::move(node); }

    bool on_sphere() const { return impl_->on_sphere; }
    void set_on_sphere(bool on) { impl_->on_sphere = on; }

    /// Same values, no history, no grad tracking.
    BasicTensor detach() const;
    /// Deep copy of values only.
    BasicTensor clone() const { return detach(); }

    bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }
    const TensorImpl<T>* impl() const { return impl_.get(); }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Fills every tracked leaf reachable from `loss` with d loss / d leaf,
/// accumulating into existing gradients.
template <typename T>
void backward(const BasicTensor<T>& loss);

/// Disables recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();
std::uint64_t next_tape_seq();

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template void backward<float>(const BasicTensor<float>&);
extern template void backward<double>(const BasicTensor<double>&);

}  // namespace swae
