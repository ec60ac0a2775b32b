#include "bertlab/heads.hpp"

namespace bertlab {

void HeadPlacement::validate(int64_t num_layers) const {
    if (mlm_layer < 1 || mlm_layer > num_layers) {
        throw ConfigError("placement: mlm_layer " + std::to_string(mlm_layer) +
                          " outside [1," + std::to_string(num_layers) + "]");
    }
    if (nsp_layer < 1 || nsp_layer > num_layers) {
        throw ConfigError("placement: nsp_layer " + std::to_string(nsp_layer) +
                          " outside [1," + std::to_string(num_layers) + "]");
    }
}

const char* to_string(ConcatMode m) {
    switch (m) {
    case ConcatMode::none: return "none";
    case ConcatMode::cls_embedding: return "cls";
    case ConcatMode::nsp_output: return "nsp";
    }
    return "none";
}

ConcatMode concat_mode_from_string(const std::string& s) {
    if (s == "none") return ConcatMode::none;
    if (s == "cls" || s == "cls_embedding") return ConcatMode::cls_embedding;
    if (s == "nsp" || s == "nsp_output") return ConcatMode::nsp_output;
    throw ConfigError("unknown concat mode '" + s + "' (expected none|cls|nsp)");
}

int64_t mlm_input_width(int64_t hidden_size, ConcatMode concat) {
    switch (concat) {
    case ConcatMode::none: return hidden_size;
    case ConcatMode::cls_embedding: return hidden_size * 2;
    case ConcatMode::nsp_output: return hidden_size + 2;
    }
    return hidden_size;
}

PretrainHeads PretrainHeads::init(const EncoderConfig& cfg, const HeadPlacement& placement,
                                  ConcatMode pt_concat, Rng& rng) {
    placement.validate(cfg.num_layers);
    if (pt_concat == ConcatMode::nsp_output && !placement.nsp_enabled) {
        throw ConfigError("concat mode 'nsp' requires the NSP head to be enabled");
    }
    const int64_t h = cfg.hidden_size;
    const double s = cfg.init_stddev;
    PretrainHeads heads;
    if (placement.nsp_enabled) {
        heads.nsp_w = Tensor::randn({h, 2}, rng, s, true);
        heads.nsp_b = Tensor::zeros({2}, true);
    }
    const int64_t in_w = mlm_input_width(h, pt_concat);
    heads.mlm_dense_w = Tensor::randn({in_w, h}, rng, s, true);
    heads.mlm_dense_b = Tensor::zeros({h}, true);
    heads.mlm_ln_gamma = Tensor::full({h}, 1.0, true);
    heads.mlm_ln_beta = Tensor::zeros({h}, true);
    heads.mlm_proj_w = Tensor::randn({h, cfg.vocab_size}, rng, s, true);
    heads.mlm_proj_b = Tensor::zeros({cfg.vocab_size}, true);
    if (placement.bigram_enabled) {
        heads.bigram_w = Tensor::randn({h, 2}, rng, s, true);
        heads.bigram_b = Tensor::zeros({2}, true);
    }
    return heads;
}

void PretrainHeads::append_named(std::vector<NamedParam>& out) const {
    if (nsp_w.defined()) {
        out.emplace_back("heads.nsp.w", nsp_w);
        out.emplace_back("heads.nsp.b", nsp_b);
    }
    out.emplace_back("heads.mlm.dense.w", mlm_dense_w);
    out.emplace_back("heads.mlm.dense.b", mlm_dense_b);
    out.emplace_back("heads.mlm.ln.gamma", mlm_ln_gamma);
    out.emplace_back("heads.mlm.ln.beta", mlm_ln_beta);
    out.emplace_back("heads.mlm.proj.w", mlm_proj_w);
    out.emplace_back("heads.mlm.proj.b", mlm_proj_b);
    if (bigram_w.defined()) {
        out.emplace_back("heads.bigram.w", bigram_w);
        out.emplace_back("heads.bigram.b", bigram_b);
    }
}

Tensor nsp_forward(const PretrainHeads& heads, const Tensor& cls_at_tap) {
    if (!heads.nsp_w.defined()) {
        throw ConfigError("nsp_forward: NSP head is disabled in this model");
    }
    if (cls_at_tap.rank() != 2 || cls_at_tap.dim(0) != 1) {
        throw ShapeError("nsp_forward: expected [1,hidden] CLS state, got " +
                         shape_str(cls_at_tap.shape()));
    }
    return add_bias(matmul(cls_at_tap, heads.nsp_w), heads.nsp_b);
}

Tensor mlm_forward(const PretrainHeads& heads, const Tensor& token_states_at_tap,
                   ConcatMode concat, const Tensor* sentence_vec,
                   std::span<const int64_t> masked_positions) {
    if (concat == ConcatMode::none) {
        if (sentence_vec != nullptr) {
            throw ConfigError("mlm_forward: sentence_vec given but concat mode is 'none'");
        }
    } else {
        if (sentence_vec == nullptr || !sentence_vec->defined()) {
            throw ConfigError(std::string("mlm_forward: concat mode '") + to_string(concat) +
                              "' requires a sentence vector");
        }
        const int64_t want =
            concat == ConcatMode::cls_embedding ? token_states_at_tap.dim(1) : 2;
        if (sentence_vec->numel() != want) {
            throw ConfigError("mlm_forward: sentence vector has " +
                              std::to_string(sentence_vec->numel()) + " values, concat mode '" +
                              to_string(concat) + "' needs " + std::to_string(want));
        }
    }
    const int64_t expect_w = heads.mlm_dense_w.dim(0);
    const int64_t got_w = token_states_at_tap.dim(1) +
                          (concat == ConcatMode::none ? 0 : sentence_vec->numel());
    if (expect_w != got_w) {
        throw ConfigError("mlm_forward: classifier input width " + std::to_string(got_w) +
                          " does not match head width " + std::to_string(expect_w) +
                          " (model was built for a different concat mode)");
    }

    Tensor x = gather_rows(token_states_at_tap, masked_positions);
    if (concat != ConcatMode::none) {
        Tensor sv = repeat_row(*sentence_vec, x.dim(0));
        x = concat_cols({x, sv});
    }
    Tensor hdn = gelu(add_bias(matmul(x, heads.mlm_dense_w), heads.mlm_dense_b));
    hdn = layer_norm(hdn, heads.mlm_ln_gamma, heads.mlm_ln_beta);
    return add_bias(matmul(hdn, heads.mlm_proj_w), heads.mlm_proj_b);
}

Tensor bigram_shift_forward(const PretrainHeads& heads, const Tensor& token_states) {
    if (!heads.bigram_w.defined()) {
        throw ConfigError("bigram_shift_forward: bigram-shift head is disabled in this model");
    }
    return add_bias(matmul(token_states, heads.bigram_w), heads.bigram_b);
}

} // namespace bertlab
