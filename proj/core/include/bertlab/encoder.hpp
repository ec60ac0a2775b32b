#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bertlab/tensor.hpp"

namespace bertlab {

using NamedParam = std::pair<std::string, Tensor>;

struct EncoderConfig {
    int64_t num_layers = 4;
    int64_t num_heads = 4;
    int64_t hidden_size = 64;
    int64_t ff_size = 128;
    int64_t max_position = 384;
    int64_t vocab_size = 0;
    int64_t type_vocab = 2;
    double dropout_p = 0.1;
    double init_stddev = 0.02;
    double layer_norm_eps = 1e-12;

    int64_t head_dim() const { return hidden_size / num_heads; }
    void validate() const;
};

struct LayerParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gamma, ln1_beta;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    Tensor ln2_gamma, ln2_beta;
};

struct EncoderParams {
    Tensor token_emb;    // [vocab x hidden]
    Tensor position_emb; // [max_position x hidden]
    Tensor segment_emb;  // [type_vocab x hidden]
    Tensor emb_ln_gamma, emb_ln_beta;
    std::vector<LayerParams> layers;

    static EncoderParams init(const EncoderConfig& cfg, Rng& rng);
    void append_named(std::vector<NamedParam>& out) const;
};

/// Activations of every encoder layer, so task heads can tap any level.
/// per_layer[k] is the output of layer k+1 (placements are 1-based).
struct EncoderOutput {
    Tensor embedding_output;
    std::vector<Tensor> per_layer;
};

/// Optionally collects attention probability tensors, one per (layer, head).
struct AttentionTrace {
    std::vector<Tensor> probs;
};

/// Token + position + segment embeddings, then layer norm and dropout.
/// rng may be null when !training or dropout_p == 0.
Tensor embed(const EncoderConfig& cfg, const EncoderParams& params,
             std::span<const int64_t> token_ids, std::span<const int64_t> segment_ids,
             bool training, Rng* dropout_rng);

/// Post-norm transformer stack. attention_mask[i] == 0 marks padding;
/// padded keys get a large negative additive score from all queries.
EncoderOutput encode(const EncoderConfig& cfg, const EncoderParams& params,
                     const Tensor& embedded, std::span<const uint8_t> attention_mask,
                     bool training, Rng* dropout_rng, AttentionTrace* trace = nullptr);

} // namespace bertlab
