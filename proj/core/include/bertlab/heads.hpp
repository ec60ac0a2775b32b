#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "bertlab/encoder.hpp"
#include "bertlab/tensor.hpp"

namespace bertlab {

/// Which encoder layer feeds each pre-training head. Layers are 1-based;
/// original BERT is mlm_layer == nsp_layer == num_layers. nsp_layer < mlm_layer
/// is the Lower NSP family, mlm_layer < nsp_layer is Lower Mask.
struct HeadPlacement {
    int64_t mlm_layer = 0;
    int64_t nsp_layer = 0;
    bool nsp_enabled = true;
    bool bigram_enabled = false;

    void validate(int64_t num_layers) const;
};

/// Sentence-level information appended to every masked-LM classifier input:
/// nothing, the [CLS] hidden state at the NSP tap (hidden_size values), or the
/// 2-dimensional NSP classifier output (pre-softmax logits).
enum class ConcatMode { none, cls_embedding, nsp_output };

const char* to_string(ConcatMode m);
ConcatMode concat_mode_from_string(const std::string& s);

/// Width of the masked-LM classifier input under a concat mode.
int64_t mlm_input_width(int64_t hidden_size, ConcatMode concat);

struct PretrainHeads {
    // NSP: single affine hidden -> 2. Undefined tensors when NSP disabled.
    Tensor nsp_w, nsp_b;
    // Masked LM: affine -> gelu -> layer_norm -> vocab projection.
    Tensor mlm_dense_w, mlm_dense_b;
    Tensor mlm_ln_gamma, mlm_ln_beta;
    Tensor mlm_proj_w, mlm_proj_b;
    // Bigram shift: per-token affine hidden -> 2. Undefined when disabled.
    Tensor bigram_w, bigram_b;

    static PretrainHeads init(const EncoderConfig& cfg, const HeadPlacement& placement,
                              ConcatMode pt_concat, Rng& rng);
    void append_named(std::vector<NamedParam>& out) const;
};

struct PretrainLossBreakdown {
    Tensor mlm_loss;
    std::optional<Tensor> nsp_loss;
    std::optional<Tensor> bigram_loss;
    Tensor total;
};

/// Two-class is-next/not-next logits from the [CLS] state at the NSP tap.
Tensor nsp_forward(const PretrainHeads& heads, const Tensor& cls_at_tap);

/// Vocab logits for each masked position. token_states_at_tap is the full
/// [seq x hidden] activation of the masked-LM tap layer; sentence_vec must be
/// present iff concat != none and carry hidden (cls_embedding) or 2
/// (nsp_output) values.
Tensor mlm_forward(const PretrainHeads& heads, const Tensor& token_states_at_tap,
                   ConcatMode concat, const Tensor* sentence_vec,
                   std::span<const int64_t> masked_positions);

/// Per-token in-place/displaced logits at the masked-LM tap layer.
Tensor bigram_shift_forward(const PretrainHeads& heads, const Tensor& token_states);

} // namespace bertlab
