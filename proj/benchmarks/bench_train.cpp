#include <benchmark/benchmark.h>

#include "bertlab/train.hpp"

using namespace bertlab;

namespace {

void BM_adam_step(benchmark::State& state) {
    const int64_t n = state.range(0);
    Rng rng(9);
    Tensor w = Tensor::randn({n, n}, rng, 0.02, true);
    AdamAmsgrad opt({{"w", w}}, AdamAmsgrad::Config{1e-4, 1e-4});
    for (auto _ : state) {
        state.PauseTiming();
        {
            GradTape tape;
            tape.backward(sum(w));
        }
        state.ResumeTiming();
        opt.step();
        opt.zero_grad();
    }
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_adam_step)->Arg(64)->Arg(256);

} // namespace
