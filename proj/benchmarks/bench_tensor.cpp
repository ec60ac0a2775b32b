#include <benchmark/benchmark.h>

#include "bertlab/tensor.hpp"

using namespace bertlab;

namespace {

void BM_matmul(benchmark::State& state) {
    const int64_t n = state.range(0);
    Rng rng(1);
    Tensor a = Tensor::randn({n, n}, rng, 1.0);
    Tensor b = Tensor::randn({n, n}, rng, 1.0);
    for (auto _ : state) {
        Tensor c = matmul(a, b);
        benchmark::DoNotOptimize(c.data().data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_softmax_rows(benchmark::State& state) {
    const int64_t n = state.range(0);
    Rng rng(2);
    Tensor x = Tensor::randn({n, n}, rng, 3.0);
    for (auto _ : state) {
        Tensor y = softmax(x, -1);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_softmax_rows)->Arg(64)->Arg(256);

void BM_layer_norm(benchmark::State& state) {
    const int64_t rows = state.range(0);
    Rng rng(3);
    Tensor x = Tensor::randn({rows, 64}, rng, 1.0);
    Tensor gamma = Tensor::full({64}, 1.0);
    Tensor beta = Tensor::zeros({64});
    for (auto _ : state) {
        Tensor y = layer_norm(x, gamma, beta);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_layer_norm)->Arg(128)->Arg(512);

void BM_matmul_backward(benchmark::State& state) {
    const int64_t n = state.range(0);
    Rng rng(4);
    Tensor a = Tensor::randn({n, n}, rng, 1.0, true);
    Tensor b = Tensor::randn({n, n}, rng, 1.0, true);
    for (auto _ : state) {
        GradTape tape;
        Tensor loss = sum(matmul(a, b));
        tape.backward(loss);
        a.zero_grad();
        b.zero_grad();
    }
}
BENCHMARK(BM_matmul_backward)->Arg(32)->Arg(64);

} // namespace
