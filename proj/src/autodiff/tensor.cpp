#include "swae/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "swae/errors.hpp"

namespace swae {

namespace {
thread_local int no_grad_depth = 0;
thread_local std::uint64_t tape_counter = 0;
}  // namespace

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }
std::uint64_t next_tape_seq() { return ++tape_counter; }

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor() : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->shape = {0};
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor: zero-sized dimension in shape " + shape_str(shape));
    }
    if (numel_of(shape) != data.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                         std::to_string(numel_of(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = numel_of(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
    return BasicTensor(Shape{1}, std::vector<T>{value});
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
    return impl_->data[0];
}

template <typename T>
std::vector<T> BasicTensor<T>::grad() const {
    if (impl_->grad.empty()) return std::vector<T>(impl_->data.size(), T(0));
    return impl_->grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
    BasicTensor out(impl_->shape, impl_->data, false);
    out.impl_->on_sphere = impl_->on_sphere;
    return out;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be a single element, got shape " +
                         shape_str(loss.shape()));
    }
    if (!loss.node()) throw ShapeError("backward: tensor has no recorded tape");

    using Node = TapeNode<T>;
    // Collect every node reachable from the loss.
    std::vector<Node*> nodes;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.node().get()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& in : n->inputs) {
            Node* p = in.node().get();
            if (p && seen.insert(p).second) stack.push_back(p);
        }
    }
    // Replay in reverse forward order; each node is visited once, after all of
    // its consumers.
    std::sort(nodes.begin(), nodes.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

    std::unordered_map<Node*, std::vector<T>> pending;
    pending[loss.node().get()] = std::vector<T>{T(1)};

    auto accumulate = [](std::vector<T>& dst, std::vector<T>&& src) {
        if (dst.empty()) {
            dst = std::move(src);
        } else {
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    };

    for (Node* n : nodes) {
        auto it = pending.find(n);
        if (it == pending.end()) continue;
        std::vector<T> gout = std::move(it->second);
        pending.erase(it);
        auto gin = n->backward(gout);
        for (std::size_t i = 0; i < n->inputs.size(); ++i) {
            if (i >= gin.size() || gin[i].empty()) continue;
            auto& in = n->inputs[i];
            if (in.node()) {
                accumulate(pending[in.node().get()], std::move(gin[i]));
            } else if (in.requires_grad()) {
                // Leaves are shared handles; write through a copy of the handle.
                BasicTensor<T> leaf = in;
                accumulate(leaf.grad_buffer(), std::move(gin[i]));
            }
        }
    }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);

}  // namespace swae
