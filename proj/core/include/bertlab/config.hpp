#pragma once

#include <span>
#include <string>
#include <vector>

#include "bertlab/eval.hpp"
#include "bertlab/train.hpp"

namespace bertlab {

enum class Variant {
    bert_baseline,
    lower_nsp,
    lower_mask,
    lower_nsp_freeze,
    without_nsp,
    bigram_shift,
};

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// One experiment, parsed from a sectioned key/value file. Unset placement
/// layers are derived from the variant; the canonical serialization (sorted
/// sections and keys, every effective value) defines the config hash embedded
/// in all artifacts.
struct ExperimentConfig {
    // [experiment]
    Variant variant = Variant::bert_baseline;
    uint64_t seed = 1;
    std::string out_dir = "runs/default";

    // [model]
    int64_t num_layers = 4;
    int64_t num_heads = 4;
    int64_t hidden_size = 64;
    int64_t ff_size = 128;
    int64_t max_position = 384;
    double dropout = 0.1;

    // [placement] (0 = derive from variant)
    int64_t mlm_layer = 0;
    int64_t nsp_layer = 0;

    // [concat]
    ConcatMode pt_concat = ConcatMode::none;
    ConcatMode ft_concat = ConcatMode::none;

    // [data]
    std::string corpus;
    std::string data_dir = "data";
    int64_t min_freq = 1;
    int64_t short_len = 128;
    int64_t long_len = 384;
    double mask_prob = 0.15;
    double bigram_swap_prob = 0.15;

    // [pretrain]
    double pt_lr = 1e-4;
    double pt_weight_decay = 1e-4;
    int64_t pt_total_steps = 100;
    int64_t batch_short = 32;
    int64_t batch_long = 1;
    int64_t checkpoint_every = 0;
    bool freeze_enabled = false;   // forced on for lower_nsp_freeze
    int64_t freeze_step = 0;       // 0 = half of total steps
    double freeze_nsp_loss = 0.0;  // 0 = no loss trigger

    // [finetune]
    FtTask ft_task = FtTask::qa;
    double ft_lr = 1e-5;
    double ft_weight_decay = 0.0;
    int64_t ft_steps = 100;
    int64_t ft_batch = 1;
    int64_t ft_max_len = 64;
    std::string ft_records;
    std::string ft_eval_records;

    // [probe]
    int64_t probe_epochs = 20;
    double probe_lr = 1e-3;
    int64_t probe_batch = 32;
    double probe_val_fraction = 0.2;
    int64_t probe_length_classes = 3;
    int64_t probe_word_classes = 4;
    int64_t probe_min_per_class = 5;

    // [sweep]
    std::string sweep_placements = "auto"; // or "mlm:nsp, mlm:nsp, ..."
    std::string sweep_pt_concats = "none";
    std::string sweep_ft_concats = "none";
    std::string sweep_seeds = "1";
    int64_t sweep_steps = 0; // 0 = pretrain total_steps

    static ExperimentConfig from_text(const std::string& text,
                                      const std::vector<std::string>& overrides = {});
    static ExperimentConfig from_file(const std::string& path,
                                      const std::vector<std::string>& overrides = {});

    void validate() const;

    HeadPlacement effective_placement() const;
    EncoderConfig encoder_config(int64_t vocab_size) const;
    TrainConfig pretrain_train_config() const;
    TrainConfig finetune_train_config() const;
    FreezePolicy freeze_policy() const;
    ProbeConfig probe_config() const;
    ProbeOptions probe_options() const;

    std::string canonical() const;
    std::string hash_hex() const;
};

struct SweepSpec {
    std::vector<HeadPlacement> placements;
    std::vector<ConcatMode> pt_concats, ft_concats;
    std::vector<uint64_t> seeds;
};

SweepSpec parse_sweep_spec(const ExperimentConfig& cfg);

} // namespace bertlab
