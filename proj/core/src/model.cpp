#include "bertlab/model.hpp"

namespace bertlab {

namespace {

std::vector<int64_t> masked_positions_of(const PretrainExample& ex) {
    std::vector<int64_t> out;
    for (size_t i = 0; i < ex.mlm_labels.size(); ++i) {
        if (ex.mlm_labels[i] != kIgnoreLabel) out.push_back(static_cast<int64_t>(i));
    }
    return out;
}

Tensor batch_mean(std::vector<Tensor> per_example) {
    Tensor acc = per_example.front();
    for (size_t i = 1; i < per_example.size(); ++i) acc = add(acc, per_example[i]);
    if (per_example.size() > 1) acc = scale(acc, 1.0 / static_cast<double>(per_example.size()));
    return acc;
}

Tensor weighted(const Tensor& t, double w) {
    return w == 1.0 ? t : scale(t, w);
}

} // namespace

PretrainModel PretrainModel::init(const EncoderConfig& cfg, const HeadPlacement& placement,
                                  ConcatMode pt_concat, uint64_t seed) {
    cfg.validate();
    placement.validate(cfg.num_layers);
    PretrainModel m;
    m.config = cfg;
    m.placement = placement;
    m.pt_concat = pt_concat;
    Rng enc_rng = stream_rng(seed, "init.encoder");
    m.encoder = EncoderParams::init(cfg, enc_rng);
    Rng head_rng = stream_rng(seed, "init.heads");
    m.heads = PretrainHeads::init(cfg, placement, pt_concat, head_rng);
    return m;
}

std::vector<NamedParam> PretrainModel::named_parameters() const {
    std::vector<NamedParam> out;
    encoder.append_named(out);
    heads.append_named(out);
    return out;
}

PretrainLossBreakdown pretrain_loss(const PretrainModel& model,
                                    std::span<const PretrainExample> batch, bool training,
                                    Rng* dropout_rng) {
    if (batch.empty()) throw DataError("pretrain_loss: empty batch");
    const HeadPlacement& pl = model.placement;
    if (model.pt_concat == ConcatMode::nsp_output && !pl.nsp_enabled) {
        throw ConfigError("pretrain_loss: concat mode 'nsp' requires the NSP head");
    }

    std::vector<Tensor> mlm_losses, nsp_losses, bigram_losses;
    for (const PretrainExample& ex : batch) {
        Tensor emb = embed(model.config, model.encoder, ex.token_ids, ex.segment_ids, training,
                           dropout_rng);
        EncoderOutput out =
            encode(model.config, model.encoder, emb, ex.attention_mask, training, dropout_rng);

        const Tensor& mlm_tap = out.per_layer[static_cast<size_t>(pl.mlm_layer - 1)];
        const Tensor& nsp_tap = out.per_layer[static_cast<size_t>(pl.nsp_layer - 1)];

        // Sentence-level vector shared by the NSP loss and the concat path.
        Tensor cls_state;
        Tensor nsp_logits;
        if (pl.nsp_enabled || model.pt_concat == ConcatMode::cls_embedding) {
            const int64_t cls_pos[] = {0};
            cls_state = gather_rows(nsp_tap, cls_pos);
        }
        if (pl.nsp_enabled) nsp_logits = nsp_forward(model.heads, cls_state);

        const Tensor* sentence_vec = nullptr;
        if (model.pt_concat == ConcatMode::cls_embedding) {
            sentence_vec = &cls_state;
        } else if (model.pt_concat == ConcatMode::nsp_output) {
            sentence_vec = &nsp_logits;
        }

        std::vector<int64_t> positions = masked_positions_of(ex);
        if (positions.empty()) {
            throw DataError("pretrain_loss: example has no masked positions");
        }
        std::vector<int64_t> labels;
        labels.reserve(positions.size());
        for (int64_t p : positions) labels.push_back(ex.mlm_labels[static_cast<size_t>(p)]);
        Tensor mlm_logits =
            mlm_forward(model.heads, mlm_tap, model.pt_concat, sentence_vec, positions);
        mlm_losses.push_back(cross_entropy(mlm_logits, labels));

        if (pl.nsp_enabled) {
            const int64_t target[] = {ex.nsp_label};
            nsp_losses.push_back(cross_entropy(nsp_logits, target));
        }
        if (pl.bigram_enabled) {
            Tensor bs_logits = bigram_shift_forward(model.heads, mlm_tap);
            bigram_losses.push_back(
                cross_entropy(bs_logits, ex.bigram_labels, kIgnoreLabel));
        }
    }

    PretrainLossBreakdown breakdown;
    breakdown.mlm_loss = batch_mean(std::move(mlm_losses));
    Tensor total = weighted(breakdown.mlm_loss, model.mlm_weight);
    if (!nsp_losses.empty()) {
        breakdown.nsp_loss = batch_mean(std::move(nsp_losses));
        total = add(total, weighted(*breakdown.nsp_loss, model.nsp_weight));
    }
    if (!bigram_losses.empty()) {
        breakdown.bigram_loss = batch_mean(std::move(bigram_losses));
        total = add(total, weighted(*breakdown.bigram_loss, model.bigram_weight));
    }
    breakdown.total = total;
    return breakdown;
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

FinetuneModel FinetuneModel::from_pretrained(const PretrainModel& pretrained, FtTask task,
                                             ConcatMode ft_concat, uint64_t seed) {
    if (ft_concat == ConcatMode::nsp_output && !pretrained.placement.nsp_enabled) {
        throw ConfigError("fine-tune concat mode 'nsp' requires a checkpoint with an NSP head "
                          "(the model was pre-trained without NSP)");
    }
    if (task == FtTask::nli && ft_concat != ConcatMode::none) {
        throw ConfigError("NLI fine-tuning uses only the [CLS] embedding from the NSP level; "
                          "concat modes do not apply to sentence-level tasks");
    }
    FinetuneModel m;
    m.config = pretrained.config;
    m.placement = pretrained.placement;
    m.ft_concat = ft_concat;
    m.task = task;
    m.encoder = pretrained.encoder;
    m.pretrain_heads = pretrained.heads;
    Rng rng = stream_rng(seed, "init.ft_head");
    const int64_t h = m.config.hidden_size;
    if (task == FtTask::qa) {
        const int64_t width = mlm_input_width(h, ft_concat);
        m.qa.w = Tensor::randn({width, 2}, rng, m.config.init_stddev, true);
        m.qa.b = Tensor::zeros({2}, true);
    } else {
        m.nli.w = Tensor::randn({h, 3}, rng, m.config.init_stddev, true);
        m.nli.b = Tensor::zeros({3}, true);
    }
    return m;
}

std::vector<NamedParam> FinetuneModel::named_parameters() const {
    std::vector<NamedParam> out;
    encoder.append_named(out);
    pretrain_heads.append_named(out);
    if (qa.w.defined()) {
        out.emplace_back("heads.qa.w", qa.w);
        out.emplace_back("heads.qa.b", qa.b);
    }
    if (nli.w.defined()) {
        out.emplace_back("heads.nli.w", nli.w);
        out.emplace_back("heads.nli.b", nli.b);
    }
    return out;
}

std::vector<NamedParam> FinetuneModel::trainable_parameters() const {
    std::vector<NamedParam> out;
    encoder.append_named(out);
    if (ft_concat == ConcatMode::nsp_output) {
        out.emplace_back("heads.nsp.w", pretrain_heads.nsp_w);
        out.emplace_back("heads.nsp.b", pretrain_heads.nsp_b);
    }
    if (qa.w.defined()) {
        out.emplace_back("heads.qa.w", qa.w);
        out.emplace_back("heads.qa.b", qa.b);
    }
    if (nli.w.defined()) {
        out.emplace_back("heads.nli.w", nli.w);
        out.emplace_back("heads.nli.b", nli.b);
    }
    return out;
}

namespace {

struct FtTaps {
    Tensor token_states; // masked-LM tap
    Tensor cls_state;    // [1 x hidden] at NSP tap
};

FtTaps ft_encode(const FinetuneModel& model, const FinetuneExample& ex, bool training,
                 Rng* dropout_rng) {
    Tensor emb = embed(model.config, model.encoder, ex.token_ids, ex.segment_ids, training,
                       dropout_rng);
    EncoderOutput out =
        encode(model.config, model.encoder, emb, ex.attention_mask, training, dropout_rng);
    FtTaps taps;
    taps.token_states = out.per_layer[static_cast<size_t>(model.placement.mlm_layer - 1)];
    const int64_t cls_pos[] = {0};
    taps.cls_state =
        gather_rows(out.per_layer[static_cast<size_t>(model.placement.nsp_layer - 1)], cls_pos);
    return taps;
}

} // namespace

QaLogits qa_forward(const FinetuneModel& model, const FinetuneExample& ex, bool training,
                    Rng* dropout_rng) {
    if (model.task != FtTask::qa || !model.qa.w.defined()) {
        throw ConfigError("qa_forward: model has no QA head");
    }
    FtTaps taps = ft_encode(model, ex, training, dropout_rng);
    Tensor x = taps.token_states;
    if (model.ft_concat == ConcatMode::cls_embedding) {
        x = concat_cols({x, repeat_row(taps.cls_state, x.dim(0))});
    } else if (model.ft_concat == ConcatMode::nsp_output) {
        Tensor nsp_logits = nsp_forward(model.pretrain_heads, taps.cls_state);
        x = concat_cols({x, repeat_row(nsp_logits, x.dim(0))});
    }
    Tensor logits = add_bias(matmul(x, model.qa.w), model.qa.b); // [seq x 2]
    QaLogits out;
    out.start = transpose(slice_cols(logits, 0, 1));
    out.end = transpose(slice_cols(logits, 1, 1));
    return out;
}

Tensor qa_loss(const FinetuneModel& model, const FinetuneExample& ex, bool training,
               Rng* dropout_rng) {
    QaLogits logits = qa_forward(model, ex, training, dropout_rng);
    const int64_t start_target[] = {ex.span_start};
    const int64_t end_target[] = {ex.span_end};
    Tensor loss = add(cross_entropy(logits.start, start_target),
                      cross_entropy(logits.end, end_target));
    return scale(loss, 0.5);
}

Tensor nli_forward(const FinetuneModel& model, const FinetuneExample& ex, bool training,
                   Rng* dropout_rng) {
    if (model.task != FtTask::nli || !model.nli.w.defined()) {
        throw ConfigError("nli_forward: model has no NLI head");
    }
    FtTaps taps = ft_encode(model, ex, training, dropout_rng);
    return add_bias(matmul(taps.cls_state, model.nli.w), model.nli.b);
}

Tensor nli_loss(const FinetuneModel& model, const FinetuneExample& ex, bool training,
                Rng* dropout_rng) {
    Tensor logits = nli_forward(model, ex, training, dropout_rng);
    const int64_t target[] = {ex.label};
    return cross_entropy(logits, target);
}

uint64_t parameters_checksum(const std::vector<NamedParam>& params) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (const auto& [name, t] : params) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.data().data(), t.data().size() * sizeof(double), h);
    }
    return h;
}

} // namespace bertlab
