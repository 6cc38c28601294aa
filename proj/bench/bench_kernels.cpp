// Serial reference kernels vs the OpenMP kernels on dense-block shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "xdx/kernels.hpp"
#include "xdx/rng.hpp"

namespace {

using namespace xdx;
using kernels::ConvGeometry;

std::vector<real> random_values(std::size_t n, std::uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<real> v(n);
    for (auto& x : v) x = static_cast<real>(rng.uniform() * 2 - 1);
    return v;
}

// Args: batch, channels, spatial, kernel.
ConvGeometry geometry(const benchmark::State& state) {
    ConvGeometry g;
    g.batch = static_cast<std::size_t>(state.range(0));
    g.in_channels = static_cast<std::size_t>(state.range(1));
    g.out_channels = 32;
    g.in_h = g.in_w = static_cast<std::size_t>(state.range(2));
    g.kernel = static_cast<std::size_t>(state.range(3));
    g.pad = g.kernel / 2;
    return g;
}

template <auto Forward>
void conv_forward(benchmark::State& state) {
    const auto g = geometry(state);
    const auto in = random_values(g.input_size(), 1), w = random_values(g.weight_size(), 2);
    std::vector<real> out(g.output_size());
    for (auto _ : state) {
        Forward(g, in, w, {}, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * g.output_size()));
}

template <auto BackwardInput>
void conv_backward_input(benchmark::State& state) {
    const auto g = geometry(state);
    const auto go = random_values(g.output_size(), 3), w = random_values(g.weight_size(), 2);
    std::vector<real> gi(g.input_size());
    for (auto _ : state) {
        BackwardInput(g, go, w, gi);
        benchmark::DoNotOptimize(gi.data());
    }
}

template <auto BackwardWeight>
void conv_backward_weight(benchmark::State& state) {
    const auto g = geometry(state);
    const auto go = random_values(g.output_size(), 3), in = random_values(g.input_size(), 1);
    std::vector<real> gw(g.weight_size());
    for (auto _ : state) {
        BackwardWeight(g, go, in, gw);
        benchmark::DoNotOptimize(gw.data());
    }
}

void shapes(benchmark::internal::Benchmark* b) {
    b->Args({8, 64, 28, 3})->Args({8, 128, 14, 1})->Args({1, 256, 56, 3})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(conv_forward<kernels::reference::conv2d_forward>)->Name("conv_forward/reference")->Apply(shapes);
BENCHMARK(conv_forward<kernels::conv2d_forward>)->Name("conv_forward/openmp")->Apply(shapes);
BENCHMARK(conv_backward_input<kernels::reference::conv2d_backward_input>)
    ->Name("conv_backward_input/reference")
    ->Apply(shapes);
BENCHMARK(conv_backward_input<kernels::conv2d_backward_input>)->Name("conv_backward_input/openmp")->Apply(shapes);
BENCHMARK(conv_backward_weight<kernels::reference::conv2d_backward_weight>)
    ->Name("conv_backward_weight/reference")
    ->Apply(shapes);
BENCHMARK(conv_backward_weight<kernels::conv2d_backward_weight>)->Name("conv_backward_weight/openmp")->Apply(shapes);

BENCHMARK_MAIN();
