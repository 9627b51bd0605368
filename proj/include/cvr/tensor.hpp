#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cvr {

inline constexpr std::array<const char*, 5> kAxisNames{"N", "C", "T", "H", "W"};

// Extents of a dense N x C x T x H x W array. Every extent is at least 1.
struct Shape {
    std::array<std::size_t, 5> dims{1, 1, 1, 1, 1};

    Shape() = default;
    Shape(std::size_t n, std::size_t c, std::size_t t, std::size_t h, std::size_t w);

    std::size_t n() const { return dims[0]; }
    std::size_t c() const { return dims[1]; }
    std::size_t t() const { return dims[2]; }
    std::size_t h() const { return dims[3]; }
    std::size_t w() const { return dims[4]; }
    std::size_t operator[](std::size_t axis) const { return dims[axis]; }

    std::size_t numel() const { return dims[0] * dims[1] * dims[2] * dims[3] * dims[4]; }

    // Offset of (n, c, t, h, w) in row-major storage.
    std::size_t offset(std::size_t n, std::size_t c, std::size_t t, std::size_t h,
                       std::size_t w) const {
        return (((n * dims[1] + c) * dims[2] + t) * dims[3] + h) * dims[4] + w;
    }

    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

namespace detail {

struct TensorImpl;

// One recorded operation. backward() reads the output's grad and
// accumulates into the grads of the inputs that require them.
struct Node {
    const char* name = "op";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool backward_done = false;
    std::shared_ptr<Node> grad_fn;

    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

// Whether operations record a graph. Thread-local so concurrent workers
// can run inference while another trains.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Handle to a dense 64-bit tensor. Copies share storage; values are
// immutable once produced by an operation (only leaves can be mutated,
// e.g. by an optimizer step).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t numel() const { return shape().numel(); }

    std::span<const double> data() const;
    // Leaves only; results of recorded operations are immutable.
    std::span<double> mutable_data();

    double operator()(std::size_t n, std::size_t c, std::size_t t, std::size_t h,
                      std::size_t w) const;
    double item() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Copy of the values with no graph attached.
    Tensor detach() const;

    // Reverse-mode pass from a scalar loss. The recorded graph is released
    // afterwards; calling again on the same loss raises a StateError.
    void backward() const;

    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

    // Builds the result of an operation. Records a graph node when grad
    // mode is on and any input requires a gradient.
    static Tensor from_op(const char* name, Shape shape, std::vector<double> data,
                          std::vector<Tensor> inputs,
                          std::function<void(const detail::TensorImpl& out)> backward);

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Gradient buffer of an op input, or nullptr when that input is not tracked.
std::vector<double>* grad_target(const Tensor& input);

}  // namespace cvr
