#include "cvr/tensor.hpp"

#include <unordered_set>

#include "cvr/errors.hpp"

namespace cvr {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

Shape::Shape(std::size_t n, std::size_t c, std::size_t t, std::size_t h, std::size_t w)
    : dims{n, c, t, h, w} {
    for (std::size_t axis = 0; axis < 5; ++axis) {
        if (dims[axis] == 0) {
            throw DimensionError(std::string("extent of axis ") + kAxisNames[axis] +
                                 " must be >= 1");
        }
    }
}

std::string Shape::str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < 5; ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + ")";
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
    impl_->shape = shape;
    impl_->data.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : impl_(std::make_shared<detail::TensorImpl>()) {
    if (data.size() != shape.numel()) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape.str());
    }
    impl_->shape = shape;
    impl_->data = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, value); }

static const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& p) {
    if (!p) throw StateError("use of an undefined tensor");
    return *p;
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::span<const double> Tensor::data() const { return checked(impl_).data; }

std::span<double> Tensor::mutable_data() {
    checked(impl_);
    if (impl_->grad_fn) throw StateError("cannot mutate the result of a recorded operation");
    return impl_->data;
}

double Tensor::operator()(std::size_t n, std::size_t c, std::size_t t, std::size_t h,
                          std::size_t w) const {
    const auto& impl = checked(impl_);
    return impl.data[impl.shape.offset(n, c, t, h, w)];
}

double Tensor::item() const {
    const auto& impl = checked(impl_);
    if (impl.data.size() != 1) {
        throw PreconditionError("item() on tensor of shape " + impl.shape.str());
    }
    return impl.data[0];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    checked(impl_);
    if (impl_->grad_fn) throw StateError("requires_grad can only be set on leaf tensors");
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::is_leaf() const { return checked(impl_).grad_fn == nullptr; }

bool Tensor::has_grad() const {
    const auto& impl = checked(impl_);
    return impl.grad.size() == impl.data.size();
}

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw StateError("tensor has no gradient");
    return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
    checked(impl_);
    return impl_->ensure_grad();
}

void Tensor::zero_grad() {
    checked(impl_);
    impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), checked(impl_).data); }

Tensor Tensor::from_op(const char* name, Shape shape, std::vector<double> data,
                       std::vector<Tensor> inputs,
                       std::function<void(const detail::TensorImpl& out)> backward) {
    Tensor out(shape, std::move(data));
    if (!GradMode::enabled()) return out;
    bool tracked = false;
    for (const auto& in : inputs) tracked = tracked || (in.defined() && in.requires_grad());
    if (!tracked) return out;

    auto node = std::make_shared<detail::Node>();
    node->name = name;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) {
        if (in.defined()) node->inputs.push_back(in.impl_);
    }
    node->backward = std::move(backward);
    out.impl_->requires_grad = true;
    out.impl_->grad_fn = std::move(node);
    return out;
}

std::vector<double>* grad_target(const Tensor& input) {
    if (!input.defined() || !input.requires_grad()) return nullptr;
    return &input.impl()->ensure_grad();
}

void Tensor::backward() const {
    auto& root = const_cast<detail::TensorImpl&>(checked(impl_));
    if (root.backward_done) {
        throw StateError("backward called twice on the same graph; run a new forward pass");
    }
    if (root.data.size() != 1) {
        throw PreconditionError("backward requires a scalar loss, got shape " +
                                root.shape.str());
    }
    if (!root.requires_grad) {
        throw PreconditionError("loss is not connected to any tracked tensor");
    }

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> visited;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
    stack.emplace_back(&root, 0);
    visited.insert(&root);
    while (!stack.empty()) {
        auto& [impl, next] = stack.back();
        if (impl->grad_fn && next < impl->grad_fn->inputs.size()) {
            detail::TensorImpl* child = impl->grad_fn->inputs[next++].get();
            if (child->requires_grad && child->grad_fn && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
            continue;
        }
        order.push_back(impl);
        stack.pop_back();
    }

    root.ensure_grad();
    root.grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* impl = *it;
        if (!impl->grad_fn) continue;
        impl->ensure_grad();
        impl->grad_fn->backward(*impl);
    }
    // Release the graph; intermediate gradients are no longer needed.
    for (detail::TensorImpl* impl : order) {
        if (!impl->grad_fn) continue;
        impl->grad_fn.reset();
        if (impl != &root) {
            impl->grad.clear();
            impl->grad.shrink_to_fit();
        }
    }
    root.backward_done = true;
}

}  // namespace cvr
