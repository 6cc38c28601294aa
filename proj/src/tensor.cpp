#include "xdx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "xdx/kernels.hpp"

namespace xdx {

namespace detail {

struct Node {
    std::vector<Tensor> inputs;
    BackwardRule rule;
};

struct TensorImpl {
    Shape shape;
    std::shared_ptr<std::vector<real>> storage;
    bool requires_grad = false;
    std::vector<real> grad;
    std::shared_ptr<Node> node;
};

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;

void require(bool ok, const std::string& message) {
    if (!ok) throw ShapeError(message);
}

}  // namespace

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << ']';
    return out.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor::Tensor(Shape shape, std::vector<real> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
    if (xdx::numel(shape) != data.size())
        throw ShapeError("tensor of shape " + to_string(shape) + " needs " + std::to_string(xdx::numel(shape)) +
                         " values, got " + std::to_string(data.size()));
    impl_->shape = std::move(shape);
    impl_->storage = std::make_shared<std::vector<real>>(std::move(data));
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), real{0}, requires_grad); }

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
    const auto n = xdx::numel(shape);
    return Tensor(std::move(shape), std::vector<real>(n, value), requires_grad);
}

Tensor Tensor::scalar(real value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= ndim()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
    return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->storage->size(); }

std::span<const real> Tensor::data() const { return *impl_->storage; }

std::span<real> Tensor::mutable_data() {
    if (impl_->node) throw std::logic_error("cannot write into the values of a non-leaf tensor");
    return *impl_->storage;
}

real Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() needs a one-element tensor, got shape " + to_string(shape()));
    return (*impl_->storage)[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (impl_->node) throw std::logic_error("requires_grad can only be changed on leaves");
    impl_->requires_grad = on;
}

bool Tensor::is_leaf() const { return impl_->node == nullptr; }

std::span<const real> Tensor::grad() const { return impl_->grad; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), real{0});
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->storage = impl_->storage;
    return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
    return Tensor(impl_->shape, *impl_->storage, false);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

EnableGradGuard::EnableGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

struct Autograd {
    static detail::TensorImpl* impl(const Tensor& t) { return t.impl_.get(); }
    static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }

    static void run(const Tensor& root) {
        using detail::TensorImpl;
        if (root.numel() != 1 || root.ndim() > 1)
            throw ShapeError("backward() needs a scalar loss, got shape " + to_string(root.shape()));
        TensorImpl* root_impl = impl(root);
        if (!root_impl->requires_grad) return;

        // Iterative post-order DFS: a node is emitted after all of its inputs.
        std::vector<TensorImpl*> order;
        std::unordered_set<TensorImpl*> visited;
        std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root_impl, 0}};
        visited.insert(root_impl);
        while (!stack.empty()) {
            auto& [cur, next] = stack.back();
            if (cur->node && next < cur->node->inputs.size()) {
                TensorImpl* child = impl(cur->node->inputs[next++]);
                if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
                continue;
            }
            order.push_back(cur);
            stack.pop_back();
        }

        // Interior gradients are scratch for this pass only; leaves accumulate.
        std::unordered_map<TensorImpl*, std::vector<real>> interior;
        auto buffer_for = [&](TensorImpl* t) -> std::vector<real>* {
            if (!t->requires_grad) return nullptr;
            if (!t->node) {
                if (t->grad.empty()) t->grad.assign(t->storage->size(), real{0});
                return &t->grad;
            }
            auto [it, inserted] = interior.try_emplace(t);
            if (inserted) it->second.assign(t->storage->size(), real{0});
            return &it->second;
        };

        (*buffer_for(root_impl))[0] += real{1};
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorImpl* t = *it;
            if (!t->node) continue;
            std::vector<std::vector<real>*> grad_in;
            grad_in.reserve(t->node->inputs.size());
            for (const auto& in : t->node->inputs) grad_in.push_back(buffer_for(impl(in)));
            const std::vector<real>& grad_out = *buffer_for(t);
            t->node->rule(grad_out, grad_in);
            interior.erase(t);
        }
    }
};

void Tensor::backward() const { Autograd::run(*this); }

Tensor make_result(Shape shape, std::vector<real> data, std::vector<Tensor> inputs, BackwardRule rule) {
    Tensor out(std::move(shape), std::move(data), false);
    if (!t_grad_enabled) return out;
    const bool track = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!track) return out;
    auto* impl = Autograd::impl(out);
    impl->requires_grad = true;
    impl->node = std::make_shared<detail::Node>(detail::Node{std::move(inputs), std::move(rule)});
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<real> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](auto g, auto gin) {
        for (auto* buf : gin)
            if (buf)
                for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<real> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](auto g, auto gin) {
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<real> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a = a.detach(), b = b.detach()](auto g, auto gin) {
        auto x = a.data(), y = b.data();
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * y[i];
        if (gin[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * x[i];
    });
}

Tensor scale(const Tensor& a, real factor) {
    std::vector<real> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= factor;
    return make_result(a.shape(), std::move(out), {a}, [factor](auto g, auto gin) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * factor;
    });
}

Tensor sum(const Tensor& a) {
    real total = 0;
    for (real v : a.data()) total += v;
    return make_result({}, {total}, {a}, [](auto g, auto gin) {
        for (auto& v : *gin[0]) v += g[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
    return scale(sum(a), real{1} / static_cast<real>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
    require(numel(shape) == a.numel(),
            "reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    std::vector<real> out(a.data().begin(), a.data().end());
    return make_result(std::move(shape), std::move(out), {a}, [](auto g, auto gin) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// Activations

real stable_sigmoid(real x) {
    if (x >= 0) return real{1} / (real{1} + std::exp(-x));
    const real e = std::exp(x);
    return e / (real{1} + e);
}

Tensor relu(const Tensor& x) {
    std::vector<real> out(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0 ? in[i] : real{0};
    return make_result(x.shape(), std::move(out), {x}, [x = x.detach()](auto g, auto gin) {
        auto in = x.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in[i] > 0) (*gin[0])[i] += g[i];
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<real> out(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(in[i]);
    auto saved = out;
    return make_result(x.shape(), std::move(out), {x}, [s = std::move(saved)](auto g, auto gin) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * s[i] * (real{1} - s[i]);
    });
}

Tensor softmax(const Tensor& x) {
    require(x.ndim() >= 1, "softmax needs at least one axis");
    const std::size_t cols = x.shape().back();
    const std::size_t rows = cols ? x.numel() / cols : 0;
    std::vector<real> out(x.numel());
    auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const real* row = in.data() + r * cols;
        real* dst = out.data() + r * cols;
        const real peak = *std::max_element(row, row + cols);
        real total = 0;
        for (std::size_t c = 0; c < cols; ++c) total += (dst[c] = std::exp(row[c] - peak));
        for (std::size_t c = 0; c < cols; ++c) dst[c] /= total;
    }
    auto saved = out;
    return make_result(x.shape(), std::move(out), {x}, [s = std::move(saved), rows, cols](auto g, auto gin) {
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = r * cols;
            real dot = 0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * s[base + c];
            for (std::size_t c = 0; c < cols; ++c) (*gin[0])[base + c] += s[base + c] * (g[base + c] - dot);
        }
    });
}

Tensor activation(Activation kind, const Tensor& x) {
    switch (kind) {
        case Activation::relu: return relu(x);
        case Activation::sigmoid: return sigmoid(x);
        case Activation::softmax: return softmax(x);
    }
    throw std::invalid_argument("unknown activation");
}

// ---------------------------------------------------------------------------
// Spatial ops

namespace {

struct SpatialView {
    std::size_t batch, channels, h, w;
    bool batched;
};

SpatialView spatial_view(const Tensor& t, const char* op) {
    if (t.ndim() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
    if (t.ndim() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
    throw ShapeError(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " + to_string(t.shape()));
}

Shape spatial_shape(const SpatialView& v, std::size_t c, std::size_t h, std::size_t w) {
    if (v.batched) return {v.batch, c, h, w};
    return {c, h, w};
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const std::optional<Tensor>& bias, std::size_t stride,
              std::size_t pad) {
    const auto v = spatial_view(input, "conv2d");
    if (kernels.ndim() != 4)
        throw ShapeError("conv2d: kernels must be [C_out,C_in,k,k], got " + to_string(kernels.shape()));
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    const std::size_t k = kernels.dim(2);
    require(kernels.dim(3) == k, "conv2d: kernel must be square, got " + to_string(kernels.shape()));
    require(kernels.dim(1) == v.channels, "conv2d: kernel C_in " + std::to_string(kernels.dim(1)) +
                                              " does not match input channels " + std::to_string(v.channels));
    require(k <= v.h + 2 * pad, "conv2d: kernel size " + std::to_string(k) + " exceeds padded input height " +
                                    std::to_string(v.h + 2 * pad));
    require(k <= v.w + 2 * pad, "conv2d: kernel size " + std::to_string(k) + " exceeds padded input width " +
                                    std::to_string(v.w + 2 * pad));
    if (bias) {
        require(bias->numel() == kernels.dim(0), "conv2d: bias length " + std::to_string(bias->numel()) +
                                                     " does not match C_out " + std::to_string(kernels.dim(0)));
    }

    kernels::ConvGeometry g{v.batch, v.channels, v.h, v.w, kernels.dim(0), k, stride, pad};
    std::vector<real> out(g.output_size());
    kernels::conv2d_forward(g, input.data(), kernels.data(), bias ? bias->data() : std::span<const real>{}, out);

    std::vector<Tensor> inputs{input, kernels};
    if (bias) inputs.push_back(*bias);
    const std::size_t plane = g.out_h() * g.out_w();
    return make_result(
        spatial_shape(v, g.out_channels, g.out_h(), g.out_w()), std::move(out), std::move(inputs),
        [g, plane, x = input.detach(), w = kernels.detach()](auto grad, auto gin) {
            if (gin[0]) kernels::conv2d_backward_input(g, grad, w.data(), *gin[0]);
            if (gin[1]) kernels::conv2d_backward_weight(g, grad, x.data(), *gin[1]);
            if (gin.size() > 2 && gin[2]) {
                auto& gb = *gin[2];
                for (std::size_t n = 0; n < g.batch; ++n)
                    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
                        const real* src = grad.data() + (n * g.out_channels + oc) * plane;
                        real acc = 0;
                        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
                        gb[oc] += acc;
                    }
            }
        });
}

Tensor pool2d(const Tensor& input, PoolKind kind, std::size_t window, std::size_t stride, std::size_t pad) {
    const auto v = spatial_view(input, "pool2d");
    if (window == 0 || stride == 0) throw ShapeError("pool2d: window and stride must be positive");
    require(window <= v.h + 2 * pad, "pool2d: window " + std::to_string(window) + " exceeds input height " +
                                         std::to_string(v.h));
    require(window <= v.w + 2 * pad, "pool2d: window " + std::to_string(window) + " exceeds input width " +
                                         std::to_string(v.w));
    require(pad < window, "pool2d: padding must be smaller than the window");
    kernels::PoolGeometry g{v.batch * v.channels, v.h, v.w, window, stride, pad};
    const Shape shape = spatial_shape(v, v.channels, g.out_h(), g.out_w());
    std::vector<real> out(numel(shape));
    if (kind == PoolKind::average) {
        kernels::avg_pool_forward(g, input.data(), out);
        return make_result(shape, std::move(out), {input},
                           [g](auto grad, auto gin) { kernels::avg_pool_backward(g, grad, *gin[0]); });
    }
    std::vector<std::size_t> argmax(out.size());
    kernels::max_pool_forward(g, input.data(), out, argmax);
    return make_result(shape, std::move(out), {input}, [g, idx = std::move(argmax)](auto grad, auto gin) {
        kernels::max_pool_backward(g, grad, idx, *gin[0]);
    });
}

Tensor global_avg_pool(const Tensor& input) {
    const auto v = spatial_view(input, "global_avg_pool");
    const std::size_t plane = v.h * v.w;
    require(plane > 0, "global_avg_pool: empty spatial extent");
    std::vector<real> out(v.batch * v.channels);
    auto in = input.data();
    for (std::size_t p = 0; p < out.size(); ++p) {
        real acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += in[p * plane + i];
        out[p] = acc / static_cast<real>(plane);
    }
    Shape shape = v.batched ? Shape{v.batch, v.channels} : Shape{v.channels};
    return make_result(std::move(shape), std::move(out), {input}, [plane](auto grad, auto gin) {
        const real inv = real{1} / static_cast<real>(plane);
        auto& gi = *gin[0];
        for (std::size_t p = 0; p < grad.size(); ++p)
            for (std::size_t i = 0; i < plane; ++i) gi[p * plane + i] += grad[p] * inv;
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const auto va = spatial_view(a, "concat_channels");
    const auto vb = spatial_view(b, "concat_channels");
    require(va.batched == vb.batched && va.batch == vb.batch,
            "concat_channels: batch mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    require(va.h == vb.h, "concat_channels: height mismatch " + std::to_string(va.h) + " vs " + std::to_string(vb.h));
    require(va.w == vb.w, "concat_channels: width mismatch " + std::to_string(va.w) + " vs " + std::to_string(vb.w));
    const std::size_t plane = va.h * va.w;
    const std::size_t ca = va.channels * plane, cb = vb.channels * plane;
    std::vector<real> out(va.batch * (ca + cb));
    auto x = a.data(), y = b.data();
    for (std::size_t n = 0; n < va.batch; ++n) {
        std::copy_n(x.data() + n * ca, ca, out.data() + n * (ca + cb));
        std::copy_n(y.data() + n * cb, cb, out.data() + n * (ca + cb) + ca);
    }
    return make_result(spatial_shape(va, va.channels + vb.channels, va.h, va.w), std::move(out), {a, b},
                       [ca, cb, batch = va.batch](auto grad, auto gin) {
                           for (std::size_t n = 0; n < batch; ++n) {
                               const real* src = grad.data() + n * (ca + cb);
                               if (gin[0])
                                   for (std::size_t i = 0; i < ca; ++i) (*gin[0])[n * ca + i] += src[i];
                               if (gin[1])
                                   for (std::size_t i = 0; i < cb; ++i) (*gin[1])[n * cb + i] += src[ca + i];
                           }
                       });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
    const auto v = spatial_view(x, "slice_channels");
    require(begin <= end && end <= v.channels, "slice_channels: range [" + std::to_string(begin) + "," +
                                                   std::to_string(end) + ") outside " + std::to_string(v.channels) +
                                                   " channels");
    const std::size_t plane = v.h * v.w;
    const std::size_t width = (end - begin) * plane, total = v.channels * plane;
    std::vector<real> out(v.batch * width);
    auto in = x.data();
    for (std::size_t n = 0; n < v.batch; ++n)
        std::copy_n(in.data() + n * total + begin * plane, width, out.data() + n * width);
    return make_result(spatial_shape(v, end - begin, v.h, v.w), std::move(out), {x},
                       [width, total, offset = begin * plane, batch = v.batch](auto grad, auto gin) {
                           for (std::size_t n = 0; n < batch; ++n)
                               for (std::size_t i = 0; i < width; ++i)
                                   (*gin[0])[n * total + offset + i] += grad[n * width + i];
                       });
}

Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
    if (weight.ndim() != 2) throw ShapeError("linear: weight must be [out,in], got " + to_string(weight.shape()));
    const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
    const bool batched = x.ndim() == 2;
    require(x.ndim() == 1 || batched, "linear: input must be [in] or [N,in], got " + to_string(x.shape()));
    require(x.shape().back() == in_f, "linear: input features " + std::to_string(x.shape().back()) +
                                          " do not match weight in-features " + std::to_string(in_f));
    if (bias) require(bias->numel() == out_f, "linear: bias length does not match out-features");
    const std::size_t rows = batched ? x.dim(0) : 1;
    std::vector<real> out(rows * out_f);
    auto xi = x.data(), w = weight.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_f; ++o) {
            real acc = bias ? bias->data()[o] : real{0};
            for (std::size_t i = 0; i < in_f; ++i) acc += w[o * in_f + i] * xi[r * in_f + i];
            out[r * out_f + o] = acc;
        }
    std::vector<Tensor> inputs{x, weight};
    if (bias) inputs.push_back(*bias);
    Shape shape = batched ? Shape{rows, out_f} : Shape{out_f};
    return make_result(std::move(shape), std::move(out), std::move(inputs),
                       [rows, in_f, out_f, xd = x.detach(), wd = weight.detach()](auto g, auto gin) {
                           auto xi = xd.data(), w = wd.data();
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t o = 0; o < out_f; ++o) {
                                   const real go = g[r * out_f + o];
                                   if (gin[0])
                                       for (std::size_t i = 0; i < in_f; ++i)
                                           (*gin[0])[r * in_f + i] += go * w[o * in_f + i];
                                   if (gin[1])
                                       for (std::size_t i = 0; i < in_f; ++i)
                                           (*gin[1])[o * in_f + i] += go * xi[r * in_f + i];
                                   if (gin.size() > 2 && gin[2]) (*gin[2])[o] += go;
                               }
                       });
}

}  // namespace xdx
