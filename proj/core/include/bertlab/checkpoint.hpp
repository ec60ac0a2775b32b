#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bertlab/model.hpp"
#include "bertlab/train.hpp"

namespace bertlab {

constexpr int64_t kCheckpointFormatVersion = 1;

/// Everything needed to rebuild the model and resume: structure, step, and
/// provenance. Parameter payloads live in sidecar binaries (see FORMATS.md).
struct CheckpointMeta {
    int64_t format_version = kCheckpointFormatVersion;
    std::string kind = "pretrain"; // pretrain | finetune
    int64_t step = 0;
    uint64_t seed = 0;
    std::string config_hash;
    std::string config_text;
    uint64_t vocab_checksum = 0;

    EncoderConfig encoder;
    HeadPlacement placement;
    ConcatMode pt_concat = ConcatMode::none;
    ConcatMode ft_concat = ConcatMode::none;
    FtTask task = FtTask::qa; // finetune only
    double mlm_weight = 1.0, nsp_weight = 1.0, bigram_weight = 1.0;
};

/// Writes manifest.json + params.bin (+ optim.bin when an optimizer is given)
/// into dir, creating it if needed. Little-endian float64 payloads with a
/// per-array FNV-1a checksum recorded in the manifest.
void save_checkpoint(const std::string& dir, const CheckpointMeta& meta,
                     const std::vector<NamedParam>& params,
                     const AdamAmsgrad* optimizer = nullptr);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::vector<std::pair<std::string, std::vector<double>>> params; // saved order
    struct Optimizer {
        int64_t step_count = 0;
        std::set<std::string> frozen;
        // name -> {m, v, vmax}
        std::map<std::string, std::array<std::vector<double>, 3>> moments;
    };
    std::optional<Optimizer> optimizer;

    const std::vector<double>& param(const std::string& name) const;
};

/// Verifies format version and every array checksum; a corrupt array is
/// refused by name.
LoadedCheckpoint load_checkpoint(const std::string& dir);

/// Copies payloads into an existing parameter list; the name sets and shapes
/// must match exactly.
void restore_parameters(const LoadedCheckpoint& ckpt, const std::vector<NamedParam>& targets);
void restore_optimizer(const LoadedCheckpoint& ckpt, AdamAmsgrad& opt);

/// Rebuilds the model described by the manifest and loads its weights.
PretrainModel rebuild_pretrain_model(const LoadedCheckpoint& ckpt);
FinetuneModel rebuild_finetune_model(const LoadedCheckpoint& ckpt);

} // namespace bertlab
