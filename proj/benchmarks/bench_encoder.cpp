#include <benchmark/benchmark.h>

#include "bertlab/encoder.hpp"

using namespace bertlab;

namespace {

EncoderConfig desk_config(int64_t layers) {
    EncoderConfig cfg;
    cfg.num_layers = layers;
    cfg.num_heads = 4;
    cfg.hidden_size = 64;
    cfg.ff_size = 128;
    cfg.max_position = 384;
    cfg.vocab_size = 512;
    cfg.dropout_p = 0.0;
    return cfg;
}

void BM_encoder_forward(benchmark::State& state) {
    const int64_t layers = state.range(0);
    const int64_t seq = state.range(1);
    EncoderConfig cfg = desk_config(layers);
    Rng rng(7);
    EncoderParams params = EncoderParams::init(cfg, rng);
    std::vector<int64_t> tokens(seq), segments(seq, 0);
    std::vector<uint8_t> mask(seq, 1);
    for (int64_t i = 0; i < seq; ++i) tokens[i] = (i * 31 + 5) % cfg.vocab_size;

    for (auto _ : state) {
        Tensor emb = embed(cfg, params, tokens, segments, false, nullptr);
        EncoderOutput out = encode(cfg, params, emb, mask, false, nullptr);
        benchmark::DoNotOptimize(out.per_layer.back().data().data());
    }
}
BENCHMARK(BM_encoder_forward)->Args({2, 32})->Args({4, 32})->Args({4, 128});

} // namespace
