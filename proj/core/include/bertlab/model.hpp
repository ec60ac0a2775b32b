#pragma once

#include <span>
#include <vector>

#include "bertlab/datapipe.hpp"
#include "bertlab/encoder.hpp"
#include "bertlab/heads.hpp"

namespace bertlab {

/// Encoder plus pre-training heads under a head placement. The concat mode is
/// structural: it fixes the masked-LM classifier's input width.
struct PretrainModel {
    EncoderConfig config;
    HeadPlacement placement;
    ConcatMode pt_concat = ConcatMode::none;
    double mlm_weight = 1.0;
    double nsp_weight = 1.0;
    double bigram_weight = 1.0;

    EncoderParams encoder;
    PretrainHeads heads;

    static PretrainModel init(const EncoderConfig& cfg, const HeadPlacement& placement,
                              ConcatMode pt_concat, uint64_t seed);
    std::vector<NamedParam> named_parameters() const;
};

/// One encoder pass, each head read from its tap layer, enabled losses summed
/// with their weights. Per-task losses are batch means.
PretrainLossBreakdown pretrain_loss(const PretrainModel& model,
                                    std::span<const PretrainExample> batch, bool training,
                                    Rng* dropout_rng);

/// Span-QA head: start/end affine over token states at the masked-LM tap.
struct QaHead {
    Tensor w, b; // [width x 2]
};

/// 3-class entailment head over the [CLS] state at the NSP tap.
struct NliHead {
    Tensor w, b; // [hidden x 3]
};

struct FinetuneModel {
    EncoderConfig config;
    HeadPlacement placement;
    ConcatMode ft_concat = ConcatMode::none;
    FtTask task = FtTask::qa;

    EncoderParams encoder;
    PretrainHeads pretrain_heads; // carried over; NSP head feeds ft_concat == nsp
    QaHead qa;
    NliHead nli;

    /// Builds the task head fresh and validates concat consistency against the
    /// pre-trained model (nsp concat requires its NSP head).
    static FinetuneModel from_pretrained(const PretrainModel& pretrained, FtTask task,
                                         ConcatMode ft_concat, uint64_t seed);

    /// Everything, for checkpointing.
    std::vector<NamedParam> named_parameters() const;
    /// Encoder, task head, and the NSP head when it participates in the
    /// concat path; what the fine-tune optimizer updates.
    std::vector<NamedParam> trainable_parameters() const;
};

struct QaLogits {
    Tensor start; // [1 x seq]
    Tensor end;   // [1 x seq]
};

QaLogits qa_forward(const FinetuneModel& model, const FinetuneExample& ex, bool training,
                    Rng* dropout_rng);
Tensor qa_loss(const FinetuneModel& model, const FinetuneExample& ex, bool training,
               Rng* dropout_rng);

Tensor nli_forward(const FinetuneModel& model, const FinetuneExample& ex, bool training,
                   Rng* dropout_rng); // [1 x 3]
Tensor nli_loss(const FinetuneModel& model, const FinetuneExample& ex, bool training,
                Rng* dropout_rng);

/// Combined checksum over a parameter list, order-sensitive.
uint64_t parameters_checksum(const std::vector<NamedParam>& params);

} // namespace bertlab
