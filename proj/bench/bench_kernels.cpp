// SPDX-License-Identifier: Apache-2.0

// Serial reference vs OpenMP kernels at the shapes the pipeline uses
// (evaluation batches of a few hundred rows against small weight matrices).

#include "segp/kernels.hpp"
#include "segp/rng.hpp"

#include <benchmark/benchmark.h>

using namespace segp;
using kernels::Trans;

namespace {

Tensor random(std::size_t rows, std::size_t cols, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<double> v(rows * cols);
    for (double& x : v) {
        x = rng.uniform(-1.0, 1.0);
    }
    return Tensor::matrix(rows, cols, std::move(v));
}

template <bool Parallel>
void matmul(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = random(n, 64, 1);
    const Tensor b = random(64, 64, 2);
    for (auto _ : state) {
        Tensor c = Parallel ? kernels::matmul(a, Trans::no, b, Trans::no)
                            : kernels::serial::matmul(a, Trans::no, b, Trans::no);
        benchmark::DoNotOptimize(c.data().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}

template <bool Parallel>
void matmul_nt(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor v = random(n, 32, 3);
    const Tensor u = random(20, 32, 4);
    for (auto _ : state) {
        Tensor c = Parallel ? kernels::matmul(v, Trans::no, u, Trans::yes)
                            : kernels::serial::matmul(v, Trans::no, u, Trans::yes);
        benchmark::DoNotOptimize(c.data().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}

template <bool Parallel>
void softmax(benchmark::State& state)
{
    const Tensor x = random(static_cast<std::size_t>(state.range(0)), 20, 5);
    for (auto _ : state) {
        Tensor y = x;
        if (Parallel) {
            kernels::softmax_rows(y);
        } else {
            kernels::serial::softmax_rows(y);
        }
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}

template <bool Parallel>
void normalize(benchmark::State& state)
{
    const Tensor x = random(static_cast<std::size_t>(state.range(0)), 64, 6);
    for (auto _ : state) {
        Tensor y = x;
        if (Parallel) {
            kernels::normalize_rows(y);
        } else {
            kernels::serial::normalize_rows(y);
        }
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}

} // namespace

BENCHMARK(matmul<false>)->Name("matmul/serial")->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(matmul<true>)->Name("matmul/openmp")->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(matmul_nt<false>)->Name("matmul_nt/serial")->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(matmul_nt<true>)->Name("matmul_nt/openmp")->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(softmax<false>)->Name("softmax/serial")->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(softmax<true>)->Name("softmax/openmp")->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(normalize<false>)->Name("normalize/serial")->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(normalize<true>)->Name("normalize/openmp")->RangeMultiplier(4)->Range(64, 4096);

BENCHMARK_MAIN();
