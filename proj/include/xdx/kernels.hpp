#pragma once

// Convolution and pooling kernels.
//
// xdx::kernels holds the OpenMP versions used by the tensor ops.
// xdx::kernels::reference holds straightforward serial loops kept as the
// oracle for tests and as the baseline for bench_kernels. Both produce
// bit-identical results for any thread count: every output element is
// accumulated by exactly one thread in a fixed order.

#include <cstddef>
#include <span>

#include "xdx/tensor.hpp"

namespace xdx::kernels {

struct ConvGeometry {
    std::size_t batch = 1;
    std::size_t in_channels = 1;
    std::size_t in_h = 1;
    std::size_t in_w = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;

    std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
    std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
    std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
    std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
    std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
};

struct PoolGeometry {
    std::size_t planes = 1;  // batch * channels
    std::size_t in_h = 1;
    std::size_t in_w = 1;
    std::size_t window = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;

    std::size_t out_h() const { return (in_h + 2 * pad - window) / stride + 1; }
    std::size_t out_w() const { return (in_w + 2 * pad - window) / stride + 1; }
};

// Convolution (cross-correlation, zero padding). bias may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const real> input, std::span<const real> weight,
                    std::span<const real> bias, std::span<real> output);
// Accumulates into grad_input.
void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output,
                           std::span<const real> weight, std::span<real> grad_input);
// Accumulates into grad_weight.
void conv2d_backward_weight(const ConvGeometry& g, std::span<const real> grad_output,
                            std::span<const real> input, std::span<real> grad_weight);

void avg_pool_forward(const PoolGeometry& g, std::span<const real> input, std::span<real> output);
void avg_pool_backward(const PoolGeometry& g, std::span<const real> grad_output, std::span<real> grad_input);

// argmax receives, per output element, the flat input index of the winning element.
void max_pool_forward(const PoolGeometry& g, std::span<const real> input, std::span<real> output,
                      std::span<std::size_t> argmax);
void max_pool_backward(const PoolGeometry& g, std::span<const real> grad_output,
                       std::span<const std::size_t> argmax, std::span<real> grad_input);

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const real> input, std::span<const real> weight,
                    std::span<const real> bias, std::span<real> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output,
                           std::span<const real> weight, std::span<real> grad_input);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const real> grad_output,
                            std::span<const real> input, std::span<real> grad_weight);
void avg_pool_forward(const PoolGeometry& g, std::span<const real> input, std::span<real> output);
void max_pool_forward(const PoolGeometry& g, std::span<const real> input, std::span<real> output,
                      std::span<std::size_t> argmax);

}  // namespace reference

}  // namespace xdx::kernels
