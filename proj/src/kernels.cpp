#include "xdx/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>

namespace xdx::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

// Output columns o with 0 <= o*stride + offset - pad < extent.
struct Range {
    std::size_t begin, end;
};

Range valid_outputs(std::size_t out_extent, std::size_t in_extent, std::size_t stride, std::size_t offset,
                    std::size_t pad) {
    std::size_t begin = 0;
    if (offset < pad) begin = (pad - offset + stride - 1) / stride;
    if (in_extent + pad <= offset) return {0, 0};
    const std::size_t last = (in_extent - 1 + pad - offset) / stride;
    const std::size_t end = std::min(out_extent, last + 1);
    return {std::min(begin, end), end};
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const real> input, std::span<const real> weight,
                    std::span<const real> bias, std::span<real> output) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    const std::size_t in_plane = g.in_h * g.in_w, out_plane = oh * ow;
    const auto jobs = static_cast<std::int64_t>(g.batch * g.out_channels);
    const bool parallel = g.output_size() * g.in_channels * k * k > kParallelWork;

#pragma omp parallel for schedule(static) if (parallel)
    for (std::int64_t job = 0; job < jobs; ++job) {
        const std::size_t n = static_cast<std::size_t>(job) / g.out_channels;
        const std::size_t oc = static_cast<std::size_t>(job) % g.out_channels;
        real* dst = output.data() + (n * g.out_channels + oc) * out_plane;
        std::fill_n(dst, out_plane, bias.empty() ? real{0} : bias[oc]);
        for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
            const real* src = input.data() + (n * g.in_channels + ic) * in_plane;
            const real* w = weight.data() + (oc * g.in_channels + ic) * k * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
                const Range rows = valid_outputs(oh, g.in_h, g.stride, ky, g.pad);
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const Range cols = valid_outputs(ow, g.in_w, g.stride, kx, g.pad);
                    if (cols.begin == cols.end) continue;
                    const real wv = w[ky * k + kx];
                    for (std::size_t oy = rows.begin; oy < rows.end; ++oy) {
                        const real* srow = src + (oy * g.stride + ky - g.pad) * g.in_w;
                        real* drow = dst + oy * ow;
                        if (g.stride == 1) {
                            const real* shifted = srow + (cols.begin + kx - g.pad);
                            for (std::size_t ox = cols.begin; ox < cols.end; ++ox)
                                drow[ox] += wv * shifted[ox - cols.begin];
                        } else {
                            for (std::size_t ox = cols.begin; ox < cols.end; ++ox)
                                drow[ox] += wv * srow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output, std::span<const real> weight,
                           std::span<real> grad_input) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    const std::size_t in_plane = g.in_h * g.in_w, out_plane = oh * ow;
    const auto jobs = static_cast<std::int64_t>(g.batch * g.in_channels);
    const bool parallel = g.output_size() * g.in_channels * k * k > kParallelWork;

#pragma omp parallel for schedule(static) if (parallel)
    for (std::int64_t job = 0; job < jobs; ++job) {
        const std::size_t n = static_cast<std::size_t>(job) / g.in_channels;
        const std::size_t ic = static_cast<std::size_t>(job) % g.in_channels;
        real* dst = grad_input.data() + (n * g.in_channels + ic) * in_plane;
        for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
            const real* go = grad_output.data() + (n * g.out_channels + oc) * out_plane;
            const real* w = weight.data() + (oc * g.in_channels + ic) * k * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
                const Range rows = valid_outputs(oh, g.in_h, g.stride, ky, g.pad);
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const Range cols = valid_outputs(ow, g.in_w, g.stride, kx, g.pad);
                    const real wv = w[ky * k + kx];
                    for (std::size_t oy = rows.begin; oy < rows.end; ++oy) {
                        real* drow = dst + (oy * g.stride + ky - g.pad) * g.in_w;
                        const real* grow = go + oy * ow;
                        for (std::size_t ox = cols.begin; ox < cols.end; ++ox)
                            drow[ox * g.stride + kx - g.pad] += wv * grow[ox];
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const real> grad_output, std::span<const real> input,
                            std::span<real> grad_weight) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    const std::size_t in_plane = g.in_h * g.in_w, out_plane = oh * ow;
    const auto jobs = static_cast<std::int64_t>(g.out_channels * g.in_channels);
    const bool parallel = g.output_size() * g.in_channels * k * k > kParallelWork;

#pragma omp parallel for schedule(static) if (parallel)
    for (std::int64_t job = 0; job < jobs; ++job) {
        const std::size_t oc = static_cast<std::size_t>(job) / g.in_channels;
        const std::size_t ic = static_cast<std::size_t>(job) % g.in_channels;
        real* gw = grad_weight.data() + (oc * g.in_channels + ic) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
            const Range rows = valid_outputs(oh, g.in_h, g.stride, ky, g.pad);
            for (std::size_t kx = 0; kx < k; ++kx) {
                const Range cols = valid_outputs(ow, g.in_w, g.stride, kx, g.pad);
                real acc = 0;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    const real* src = input.data() + (n * g.in_channels + ic) * in_plane;
                    const real* go = grad_output.data() + (n * g.out_channels + oc) * out_plane;
                    for (std::size_t oy = rows.begin; oy < rows.end; ++oy) {
                        const real* srow = src + (oy * g.stride + ky - g.pad) * g.in_w;
                        const real* grow = go + oy * ow;
                        for (std::size_t ox = cols.begin; ox < cols.end; ++ox)
                            acc += grow[ox] * srow[ox * g.stride + kx - g.pad];
                    }
                }
                gw[ky * k + kx] += acc;
            }
        }
    }
}

void avg_pool_forward(const PoolGeometry& g, std::span<const real> input, std::span<real> output) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const auto planes = static_cast<std::int64_t>(g.planes);

#pragma omp parallel for schedule(static) if (g.planes * oh * ow * g.window * g.window > kParallelWork)
    for (std::int64_t p = 0; p < planes; ++p) {
        const real* src = input.data() + static_cast<std::size_t>(p) * g.in_h * g.in_w;
        real* dst = output.data() + static_cast<std::size_t>(p) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                real acc = 0;
                for (std::size_t wy = 0; wy < g.window; ++wy) {
                    const std::size_t y = oy * g.stride + wy;
                    if (y < g.pad || y - g.pad >= g.in_h) continue;
                    for (std::size_t wx = 0; wx < g.window; ++wx) {
                        const std::size_t x = ox * g.stride + wx;
                        if (x < g.pad || x - g.pad >= g.in_w) continue;
                        acc += src[(y - g.pad) * g.in_w + (x - g.pad)];
                    }
                }
                dst[oy * ow + ox] = acc / static_cast<real>(g.window * g.window);
            }
    }
}

void avg_pool_backward(const PoolGeometry& g, std::span<const real> grad_output, std::span<real> grad_input) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const real inv = real{1} / static_cast<real>(g.window * g.window);
    const auto planes = static_cast<std::int64_t>(g.planes);

#pragma omp parallel for schedule(static) if (g.planes * oh * ow * g.window * g.window > kParallelWork)
    for (std::int64_t p = 0; p < planes; ++p) {
        real* dst = grad_input.data() + static_cast<std::size_t>(p) * g.in_h * g.in_w;
        const real* src = grad_output.data() + static_cast<std::size_t>(p) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const real share = src[oy * ow + ox] * inv;
                for (std::size_t wy = 0; wy < g.window; ++wy) {
                    const std::size_t y = oy * g.stride + wy;
                    if (y < g.pad || y - g.pad >= g.in_h) continue;
                    for (std::size_t wx = 0; wx < g.window; ++wx) {
                        const std::size_t x = ox * g.stride + wx;
                        if (x < g.pad || x - g.pad >= g.in_w) continue;
                        dst[(y - g.pad) * g.in_w + (x - g.pad)] += share;
                    }
                }
            }
    }
}

void max_pool_forward(const PoolGeometry& g, std::span<const real> input, std::span<real> output,
                      std::span<std::size_t> argmax) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const auto planes = static_cast<std::int64_t>(g.planes);

#pragma omp parallel for schedule(static) if (g.planes * oh * ow * g.window * g.window > kParallelWork)
    for (std::int64_t p = 0; p < planes; ++p) {
        const std::size_t base = static_cast<std::size_t>(p) * g.in_h * g.in_w;
        const std::size_t obase = static_cast<std::size_t>(p) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                real best = -std::numeric_limits<real>::infinity();
                std::size_t where = base;
                for (std::size_t wy = 0; wy < g.window; ++wy) {
                    const std::size_t y = oy * g.stride + wy;
                    if (y < g.pad || y - g.pad >= g.in_h) continue;
                    for (std::size_t wx = 0; wx < g.window; ++wx) {
                        const std::size_t x = ox * g.stride + wx;
                        if (x < g.pad || x - g.pad >= g.in_w) continue;
                        const std::size_t idx = base + (y - g.pad) * g.in_w + (x - g.pad);
                        if (input[idx] > best) {
                            best = input[idx];
                            where = idx;
                        }
                    }
                }
                output[obase + oy * ow + ox] = best;
                argmax[obase + oy * ow + ox] = where;
            }
    }
}

void max_pool_backward(const PoolGeometry& g, std::span<const real> grad_output, std::span<const std::size_t> argmax,
                       std::span<real> grad_input) {
    // Windows overlap when stride < window, so scatter stays serial per plane.
    const std::size_t per_plane = g.out_h() * g.out_w();
    const auto planes = static_cast<std::int64_t>(g.planes);

#pragma omp parallel for schedule(static) if (grad_output.size() > kParallelWork)
    for (std::int64_t p = 0; p < planes; ++p) {
        const std::size_t begin = static_cast<std::size_t>(p) * per_plane;
        for (std::size_t i = begin; i < begin + per_plane; ++i) grad_input[argmax[i]] += grad_output[i];
    }
}

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const real> input, std::span<const real> weight,
                    std::span<const real> bias, std::span<real> output) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t oc = 0; oc < g.out_channels; ++oc)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    real acc = bias.empty() ? real{0} : bias[oc];
                    for (std::size_t ic = 0; ic < g.in_channels; ++ic)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const auto y = static_cast<std::int64_t>(oy * g.stride + ky) -
                                               static_cast<std::int64_t>(g.pad);
                                const auto x = static_cast<std::int64_t>(ox * g.stride + kx) -
                                               static_cast<std::int64_t>(g.pad);
                                if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(g.in_h) ||
                                    x >= static_cast<std::int64_t>(g.in_w))
                                    continue;
                                acc += weight[((oc * g.in_channels + ic) * k + ky) * k + kx] *
                                       input[((n * g.in_channels + ic) * g.in_h + y) * g.in_w + x];
                            }
                    output[((n * g.out_channels + oc) * oh + oy) * ow + ox] = acc;
                }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output, std::span<const real> weight,
                           std::span<real> grad_input) {
    // Gather form: each input element sums over (oc, ky, kx), the order the parallel kernel scatters in.
    const auto oh = static_cast<std::int64_t>(g.out_h()), ow = static_cast<std::int64_t>(g.out_w());
    const auto stride = static_cast<std::int64_t>(g.stride), pad = static_cast<std::int64_t>(g.pad);
    const std::size_t k = g.kernel;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t ic = 0; ic < g.in_channels; ++ic)
            for (std::size_t y = 0; y < g.in_h; ++y)
                for (std::size_t x = 0; x < g.in_w; ++x) {
                    real& dst = grad_input[((n * g.in_channels + ic) * g.in_h + y) * g.in_w + x];
                    for (std::size_t oc = 0; oc < g.out_channels; ++oc)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const std::int64_t sy = static_cast<std::int64_t>(y) + pad - static_cast<std::int64_t>(ky);
                                const std::int64_t sx = static_cast<std::int64_t>(x) + pad - static_cast<std::int64_t>(kx);
                                if (sy < 0 || sx < 0 || sy % stride != 0 || sx % stride != 0) continue;
                                const std::int64_t oy = sy / stride, ox = sx / stride;
                                if (oy >= oh || ox >= ow) continue;
                                dst += weight[((oc * g.in_channels + ic) * k + ky) * k + kx] *
                                       grad_output[((n * g.out_channels + oc) * static_cast<std::size_t>(oh) +
                                                    static_cast<std::size_t>(oy)) *
                                                       static_cast<std::size_t>(ow) +
                                                   static_cast<std::size_t>(ox)];
                            }
                }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const real> grad_output, std::span<const real> input,
                            std::span<real> grad_weight) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    for (std::size_t oc = 0; oc < g.out_channels; ++oc)
        for (std::size_t ic = 0; ic < g.in_channels; ++ic)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                    real acc = 0;
                    for (std::size_t n = 0; n < g.batch; ++n)
                        for (std::size_t oy = 0; oy < oh; ++oy)
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                const auto y = static_cast<std::int64_t>(oy * g.stride + ky) -
                                               static_cast<std::int64_t>(g.pad);
                                const auto x = static_cast<std::int64_t>(ox * g.stride + kx) -
                                               static_cast<std::int64_t>(g.pad);
                                if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(g.in_h) ||
                                    x >= static_cast<std::int64_t>(g.in_w))
                                    continue;
                                acc += grad_output[((n * g.out_channels + oc) * oh + oy) * ow + ox] *
                                       input[((n * g.in_channels + ic) * g.in_h + static_cast<std::size_t>(y)) * g.in_w +
                                             static_cast<std::size_t>(x)];
                            }
                    grad_weight[((oc * g.in_channels + ic) * k + ky) * k + kx] += acc;
                }
}

void avg_pool_forward(const PoolGeometry& g, std::span<const real> input, std::span<real> output) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t p = 0; p < g.planes; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                real acc = 0;
                for (std::size_t wy = 0; wy < g.window; ++wy)
                    for (std::size_t wx = 0; wx < g.window; ++wx) {
                        const auto y = static_cast<std::int64_t>(oy * g.stride + wy) - static_cast<std::int64_t>(g.pad);
                        const auto x = static_cast<std::int64_t>(ox * g.stride + wx) - static_cast<std::int64_t>(g.pad);
                        if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(g.in_h) ||
                            x >= static_cast<std::int64_t>(g.in_w))
                            continue;
                        acc += input[(p * g.in_h + y) * g.in_w + x];
                    }
                output[(p * oh + oy) * ow + ox] = acc / static_cast<real>(g.window * g.window);
            }
}

void max_pool_forward(const PoolGeometry& g, std::span<const real> input, std::span<real> output,
                      std::span<std::size_t> argmax) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t p = 0; p < g.planes; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                real best = -std::numeric_limits<real>::infinity();
                std::size_t where = p * g.in_h * g.in_w;
                for (std::size_t wy = 0; wy < g.window; ++wy)
                    for (std::size_t wx = 0; wx < g.window; ++wx) {
                        const auto y = static_cast<std::int64_t>(oy * g.stride + wy) - static_cast<std::int64_t>(g.pad);
                        const auto x = static_cast<std::int64_t>(ox * g.stride + wx) - static_cast<std::int64_t>(g.pad);
                        if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(g.in_h) ||
                            x >= static_cast<std::int64_t>(g.in_w))
                            continue;
                        const std::size_t idx = (p * g.in_h + y) * g.in_w + x;
                        if (input[idx] > best) {
                            best = input[idx];
                            where = idx;
                        }
                    }
                output[(p * oh + oy) * ow + ox] = best;
                argmax[(p * oh + oy) * ow + ox] = where;
            }
}

}  // namespace reference

}  // namespace xdx::kernels
