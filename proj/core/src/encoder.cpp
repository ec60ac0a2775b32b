#include "bertlab/encoder.hpp"

#include <cmath>

namespace bertlab {

namespace {

constexpr double kMaskScore = -1e30;

std::string layer_name(int64_t layer_1based) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "layer%02d", static_cast<int>(layer_1based));
    return buf;
}

Tensor maybe_dropout(const Tensor& x, double p, bool training, Rng* rng) {
    if (!training || p == 0.0) return x;
    if (rng == nullptr) throw StateError("training-mode dropout requires an rng stream");
    return dropout(x, p, true, *rng);
}

} // namespace

void EncoderConfig::validate() const {
    if (num_layers <= 0 || num_heads <= 0 || hidden_size <= 0 || ff_size <= 0 ||
        max_position <= 0 || vocab_size <= 0 || type_vocab <= 0) {
        throw ConfigError("encoder config: all dimensions must be positive");
    }
    if (hidden_size % num_heads != 0) {
        throw ConfigError("encoder config: hidden_size " + std::to_string(hidden_size) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
        throw ConfigError("encoder config: dropout_p must be in [0,1)");
    }
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    const int64_t h = cfg.hidden_size;
    const double s = cfg.init_stddev;
    EncoderParams p;
    p.token_emb = Tensor::randn({cfg.vocab_size, h}, rng, s, true);
    p.position_emb = Tensor::randn({cfg.max_position, h}, rng, s, true);
    p.segment_emb = Tensor::randn({cfg.type_vocab, h}, rng, s, true);
    p.emb_ln_gamma = Tensor::full({h}, 1.0, true);
    p.emb_ln_beta = Tensor::zeros({h}, true);
    p.layers.reserve(static_cast<size_t>(cfg.num_layers));
    for (int64_t l = 0; l < cfg.num_layers; ++l) {
        LayerParams lp;
        lp.wq = Tensor::randn({h, h}, rng, s, true);
        lp.bq = Tensor::zeros({h}, true);
        lp.wk = Tensor::randn({h, h}, rng, s, true);
        lp.bk = Tensor::zeros({h}, true);
        lp.wv = Tensor::randn({h, h}, rng, s, true);
        lp.bv = Tensor::zeros({h}, true);
        lp.wo = Tensor::randn({h, h}, rng, s, true);
        lp.bo = Tensor::zeros({h}, true);
        lp.ln1_gamma = Tensor::full({h}, 1.0, true);
        lp.ln1_beta = Tensor::zeros({h}, true);
        lp.ff_w1 = Tensor::randn({h, cfg.ff_size}, rng, s, true);
        lp.ff_b1 = Tensor::zeros({cfg.ff_size}, true);
        lp.ff_w2 = Tensor::randn({cfg.ff_size, h}, rng, s, true);
        lp.ff_b2 = Tensor::zeros({h}, true);
        lp.ln2_gamma = Tensor::full({h}, 1.0, true);
        lp.ln2_beta = Tensor::zeros({h}, true);
        p.layers.push_back(std::move(lp));
    }
    return p;
}

void EncoderParams::append_named(std::vector<NamedParam>& out) const {
    out.emplace_back("embeddings.token", token_emb);
    out.emplace_back("embeddings.position", position_emb);
    out.emplace_back("embeddings.segment", segment_emb);
    out.emplace_back("embeddings.ln.gamma", emb_ln_gamma);
    out.emplace_back("embeddings.ln.beta", emb_ln_beta);
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string pfx = layer_name(static_cast<int64_t>(l) + 1) + ".";
        const LayerParams& lp = layers[l];
        out.emplace_back(pfx + "attn.wq", lp.wq);
        out.emplace_back(pfx + "attn.bq", lp.bq);
        out.emplace_back(pfx + "attn.wk", lp.wk);
        out.emplace_back(pfx + "attn.bk", lp.bk);
        out.emplace_back(pfx + "attn.wv", lp.wv);
        out.emplace_back(pfx + "attn.bv", lp.bv);
        out.emplace_back(pfx + "attn.wo", lp.wo);
        out.emplace_back(pfx + "attn.bo", lp.bo);
        out.emplace_back(pfx + "ln1.gamma", lp.ln1_gamma);
        out.emplace_back(pfx + "ln1.beta", lp.ln1_beta);
        out.emplace_back(pfx + "ff.w1", lp.ff_w1);
        out.emplace_back(pfx + "ff.b1", lp.ff_b1);
        out.emplace_back(pfx + "ff.w2", lp.ff_w2);
        out.emplace_back(pfx + "ff.b2", lp.ff_b2);
        out.emplace_back(pfx + "ln2.gamma", lp.ln2_gamma);
        out.emplace_back(pfx + "ln2.beta", lp.ln2_beta);
    }
}

Tensor embed(const EncoderConfig& cfg, const EncoderParams& params,
             std::span<const int64_t> token_ids, std::span<const int64_t> segment_ids,
             bool training, Rng* dropout_rng) {
    if (token_ids.size() != segment_ids.size()) {
        throw ShapeError("embed: " + std::to_string(token_ids.size()) + " token ids vs " +
                         std::to_string(segment_ids.size()) + " segment ids");
    }
    if (token_ids.empty()) throw ShapeError("embed: empty input");
    const int64_t n = static_cast<int64_t>(token_ids.size());
    if (n > cfg.max_position) {
        throw DataError("embed: sequence length " + std::to_string(n) +
                        " exceeds max_position " + std::to_string(cfg.max_position));
    }
    std::vector<int64_t> positions(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;

    Tensor tok = gather_rows(params.token_emb, token_ids);
    Tensor pos = gather_rows(params.position_emb, positions);
    Tensor seg = gather_rows(params.segment_emb, segment_ids);
    Tensor x = add(add(tok, pos), seg);
    x = layer_norm(x, params.emb_ln_gamma, params.emb_ln_beta, cfg.layer_norm_eps);
    return maybe_dropout(x, cfg.dropout_p, training, dropout_rng);
}

EncoderOutput encode(const EncoderConfig& cfg, const EncoderParams& params,
                     const Tensor& embedded, std::span<const uint8_t> attention_mask,
                     bool training, Rng* dropout_rng, AttentionTrace* trace) {
    const int64_t n = embedded.dim(0);
    if (static_cast<int64_t>(attention_mask.size()) != n) {
        throw ShapeError("encode: attention mask length " +
                         std::to_string(attention_mask.size()) + " vs sequence length " +
                         std::to_string(n));
    }
    if (embedded.rank() != 2 || embedded.dim(1) != cfg.hidden_size) {
        throw ShapeError("encode: expected [seq," + std::to_string(cfg.hidden_size) +
                         "] input, got " + shape_str(embedded.shape()));
    }
    const int64_t dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<double> mask_scores(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        if (attention_mask[static_cast<size_t>(i)] == 0) mask_scores[static_cast<size_t>(i)] = kMaskScore;
    }
    Tensor key_mask = Tensor::from_data({n}, std::move(mask_scores));

    EncoderOutput out;
    out.embedding_output = embedded;
    out.per_layer.reserve(params.layers.size());

    Tensor x = embedded;
    for (const LayerParams& lp : params.layers) {
        Tensor q = add_bias(matmul(x, lp.wq), lp.bq);
        Tensor k = add_bias(matmul(x, lp.wk), lp.bk);
        Tensor v = add_bias(matmul(x, lp.wv), lp.bv);

        std::vector<Tensor> head_ctx;
        head_ctx.reserve(static_cast<size_t>(cfg.num_heads));
        for (int64_t head = 0; head < cfg.num_heads; ++head) {
            Tensor qh = slice_cols(q, head * dh, dh);
            Tensor kh = slice_cols(k, head * dh, dh);
            Tensor vh = slice_cols(v, head * dh, dh);
            Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
            scores = add_bias(scores, key_mask);
            Tensor probs = softmax(scores, -1);
            if (trace) trace->probs.push_back(probs);
            probs = maybe_dropout(probs, cfg.dropout_p, training, dropout_rng);
            head_ctx.push_back(matmul(probs, vh));
        }
        Tensor ctx = cfg.num_heads == 1 ? head_ctx.front() : concat_cols(head_ctx);
        Tensor attn = add_bias(matmul(ctx, lp.wo), lp.bo);
        x = layer_norm(add(x, maybe_dropout(attn, cfg.dropout_p, training, dropout_rng)),
                       lp.ln1_gamma, lp.ln1_beta, cfg.layer_norm_eps);

        Tensor ff = add_bias(matmul(gelu(add_bias(matmul(x, lp.ff_w1), lp.ff_b1)), lp.ff_w2),
                             lp.ff_b2);
        x = layer_norm(add(x, maybe_dropout(ff, cfg.dropout_p, training, dropout_rng)),
                       lp.ln2_gamma, lp.ln2_beta, cfg.layer_norm_eps);

        out.per_layer.push_back(x);
    }
    return out;
}

} // namespace bertlab
