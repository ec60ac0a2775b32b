#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bertlab/model.hpp"

namespace bertlab {

/// Adam with AMSGrad and decoupled weight decay. Weight decay multiplies the
/// parameter by (1 - lr*wd) before the Adam update; the denominator uses the
/// running elementwise max of the second moment.
class AdamAmsgrad {
public:
    struct Config {
        double lr = 1e-4;
        double weight_decay = 0.0;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    struct Slot {
        std::string name;
        Tensor param;
        std::vector<double> m, v, vmax;
    };

    AdamAmsgrad(std::vector<NamedParam> params, Config cfg);

    /// One update over all non-frozen parameters. An empty gradient counts as
    /// zero. Throws NumericError naming the parameter on a NaN gradient.
    void step();
    void zero_grad();

    /// Frozen parameters are skipped entirely from step() onward.
    void freeze(const std::set<std::string>& names);
    const std::set<std::string>& frozen() const { return frozen_; }

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    Config& config() { return cfg_; }
    const Config& config() const { return cfg_; }

    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }

private:
    std::vector<Slot> slots_;
    std::set<std::string> frozen_;
    Config cfg_;
    int64_t t_ = 0;
};

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    int64_t total_steps = 100;
    int64_t batch_short = 32;
    int64_t batch_long = 1;
    uint64_t seed = 1;
    int64_t checkpoint_every = 0; // 0 = final only
};

/// Freezing halts updates to every parameter the NSP loss depends on. A step
/// trigger applies at the start of that step; a loss trigger applies after
/// the step whose NSP training loss first reaches the threshold (so triggers
/// never depend on state lost across a checkpoint resume).
struct FreezePolicy {
    bool enabled = false;
    std::optional<int64_t> trigger_step;
    std::optional<double> nsp_loss_threshold;
};

/// Exactly the parameters the NSP loss can reach: embedding tables, encoder
/// layers 1..nsp_layer, and the NSP head.
std::set<std::string> apply_freeze(const PretrainModel& model);

struct PretrainDataset {
    std::vector<PretrainExample> short_set;
    std::vector<PretrainExample> long_set;
};

struct StepRecord {
    int64_t step = 0;
    int64_t scheduled_len = 0;
    double total = 0.0;
    double mlm = 0.0;
    std::optional<double> nsp;
    std::optional<double> bigram;
    bool froze_here = false;
};

struct PretrainRunResult {
    std::vector<StepRecord> log;
    int64_t freeze_step = -1;
    std::set<std::string> frozen;
};

/// Runs steps [start_step, cfg.total_steps). Example order, dropout, and the
/// per-epoch reshuffle are all pure functions of (seed, step), which makes
/// same-seed runs bit-identical and resume exact.
PretrainRunResult pretrain(
    PretrainModel& model, AdamAmsgrad& opt, const PretrainDataset& data, const TrainConfig& cfg,
    const FreezePolicy& freeze, int64_t start_step = 0,
    const std::function<void(const StepRecord&)>& on_step = {},
    const std::function<void(int64_t)>& checkpoint_hook = {});

struct FtStepRecord {
    int64_t step = 0;
    double loss = 0.0;
};

struct FinetuneRunResult {
    std::vector<FtStepRecord> log;
};

FinetuneRunResult finetune_run(
    FinetuneModel& model, AdamAmsgrad& opt, std::span<const FinetuneExample> examples,
    const TrainConfig& cfg, int64_t start_step = 0,
    const std::function<void(const FtStepRecord&)>& on_step = {},
    const std::function<void(int64_t)>& checkpoint_hook = {});

} // namespace bertlab
