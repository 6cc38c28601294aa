#pragma once

// Dense n-dimensional tensors with eager reverse-mode differentiation.
//
// Every differentiable op records a node holding its inputs and a local
// backward rule. The graph lives only as long as the tensors referencing it;
// calling backward() on a scalar walks it in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xdx {

#ifdef XDX_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised for any shape or dimension mismatch; the message names the offending dimension.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {
struct TensorImpl;
}

class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<real> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, real value, bool requires_grad = false);
    static Tensor scalar(real value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const;
    std::size_t ndim() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const real> data() const;
    /// Writable view of the values. Only leaves may be written.
    std::span<real> mutable_data();
    real item() const;
    real at(std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool is_leaf() const;

    /// Empty span until a backward pass has reached this tensor.
    std::span<const real> grad() const;
    bool has_grad() const;
    void zero_grad();

    /// Shares storage, drops history and gradient tracking.
    Tensor detach() const;
    /// Deep copy with no history.
    Tensor clone() const;

    /// Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
    void backward() const;

    bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

private:
    friend struct Autograd;
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Re-enables graph recording, e.g. for an explanation computed inside a NoGradGuard scope.
class EnableGradGuard {
public:
    EnableGradGuard();
    ~EnableGradGuard();
    EnableGradGuard(const EnableGradGuard&) = delete;
    EnableGradGuard& operator=(const EnableGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Receives the output gradient and one accumulation buffer per input
// (nullptr when that input does not need a gradient). Rules must add into
// the buffers, never overwrite them.
using BackwardRule =
    std::function<void(std::span<const real> grad_out, std::span<std::vector<real>* const> grad_in)>;

/// Builds an op result and, when any input tracks gradients, records its backward rule.
Tensor make_result(Shape shape, std::vector<real> data, std::vector<Tensor> inputs, BackwardRule rule);

// Elementwise and reductions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

enum class Activation { relu, sigmoid, softmax };

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Over the last axis.
Tensor softmax(const Tensor& x);
Tensor activation(Activation kind, const Tensor& x);

real stable_sigmoid(real x);

// Spatial ops. Inputs are [C,H,W] or [N,C,H,W]; the result keeps the rank.

Tensor conv2d(const Tensor& input, const Tensor& kernels, const std::optional<Tensor>& bias,
              std::size_t stride, std::size_t pad);

enum class PoolKind { average, max };

/// Max pooling pads with -inf; average pooling divides by window^2 and pads with zeros.
Tensor pool2d(const Tensor& input, PoolKind kind, std::size_t window, std::size_t stride,
              std::size_t pad = 0);

/// [N,C,H,W] -> [N,C] and [C,H,W] -> [C].
Tensor global_avg_pool(const Tensor& input);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Channels [begin, end).
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);

/// x: [in] or [N,in]; weight: [out,in]; bias: [out].
Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias);

}  // namespace xdx
