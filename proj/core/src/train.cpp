#include "bertlab/train.hpp"

#include <algorithm>
#include <cmath>

namespace bertlab {

AdamAmsgrad::AdamAmsgrad(std::vector<NamedParam> params, Config cfg) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (auto& [name, t] : params) {
        Slot s;
        s.name = name;
        s.param = t;
        const size_t n = static_cast<size_t>(t.numel());
        s.m.assign(n, 0.0);
        s.v.assign(n, 0.0);
        s.vmax.assign(n, 0.0);
        slots_.push_back(std::move(s));
    }
}

void AdamAmsgrad::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Slot& s : slots_) {
        if (frozen_.count(s.name)) continue;
        auto grad = s.param.grad();
        auto theta = s.param.mutable_data();
        const size_t n = theta.size();
        for (size_t i = 0; i < n; ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            if (std::isnan(g)) {
                throw NumericError("NaN gradient in parameter '" + s.name + "' at step " +
                                   std::to_string(t_));
            }
            if (cfg_.weight_decay != 0.0) {
                theta[i] -= cfg_.lr * cfg_.weight_decay * theta[i];
            }
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
            if (s.v[i] > s.vmax[i]) s.vmax[i] = s.v[i];
            const double mhat = s.m[i] / bc1;
            const double denom = std::sqrt(s.vmax[i] / bc2) + cfg_.eps;
            theta[i] -= cfg_.lr * mhat / denom;
        }
    }
}

void AdamAmsgrad::zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
}

void AdamAmsgrad::freeze(const std::set<std::string>& names) {
    frozen_.insert(names.begin(), names.end());
}

std::set<std::string> apply_freeze(const PretrainModel& model) {
    if (!model.placement.nsp_enabled) {
        throw ConfigError("apply_freeze: model has no NSP head to protect");
    }
    std::set<std::string> frozen;
    std::vector<NamedParam> all = model.named_parameters();
    for (const auto& [name, t] : all) {
        if (name.rfind("embeddings.", 0) == 0 || name.rfind("heads.nsp.", 0) == 0) {
            frozen.insert(name);
            continue;
        }
        if (name.rfind("layer", 0) == 0) {
            const int64_t layer = std::stoll(name.substr(5, 2));
            if (layer <= model.placement.nsp_layer) frozen.insert(name);
        }
    }
    return frozen;
}

namespace {

/// Deterministic epoch-shuffled walk over indices [0, pool_size). The epoch-e
/// permutation depends only on (seed, label, e), so a resumed run that
/// fast-forwards `consumed` draws sees the same stream as an uninterrupted one.
class ExampleCursor {
public:
    ExampleCursor(int64_t pool_size, uint64_t seed, std::string label)
        : pool_size_(pool_size), seed_(seed), label_(std::move(label)) {}

    int64_t next_index() {
        const int64_t n = pool_size_;
        const int64_t epoch = consumed_ / n;
        if (epoch != perm_epoch_) {
            perm_.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) perm_[static_cast<size_t>(i)] = i;
            Rng rng = stream_rng(seed_, label_, static_cast<uint64_t>(epoch));
            for (int64_t i = n - 1; i > 0; --i) {
                const int64_t j =
                    static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(i + 1)));
                std::swap(perm_[static_cast<size_t>(i)], perm_[static_cast<size_t>(j)]);
            }
            perm_epoch_ = epoch;
        }
        const int64_t idx = perm_[static_cast<size_t>(consumed_ % n)];
        ++consumed_;
        return idx;
    }

    void skip(int64_t n) {
        for (int64_t i = 0; i < n; ++i) next_index();
    }

private:
    int64_t pool_size_;
    uint64_t seed_;
    std::string label_;
    int64_t consumed_ = 0;
    int64_t perm_epoch_ = -1;
    std::vector<int64_t> perm_;
};

void check_finite_loss(double v, int64_t step) {
    if (!std::isfinite(v)) {
        throw NumericError("non-finite loss (" + std::to_string(v) + ") at step " +
                           std::to_string(step));
    }
}

} // namespace

PretrainRunResult pretrain(PretrainModel& model, AdamAmsgrad& opt, const PretrainDataset& data,
                           const TrainConfig& cfg, const FreezePolicy& freeze,
                           int64_t start_step,
                           const std::function<void(const StepRecord&)>& on_step,
                           const std::function<void(int64_t)>& checkpoint_hook) {
    if (cfg.total_steps <= 0) throw ConfigError("pretrain: total_steps must be positive");
    if (data.short_set.empty()) throw DataError("pretrain: no short-tier examples");
    const bool schedule_has_long =
        length_schedule(cfg.total_steps - 1, cfg.total_steps) == 384;
    if (schedule_has_long && data.long_set.empty()) {
        throw DataError("pretrain: the schedule reaches 384-token steps but the long-tier "
                        "example set is empty");
    }

    ExampleCursor short_cursor(static_cast<int64_t>(data.short_set.size()), cfg.seed,
                               "shuffle.short");
    ExampleCursor long_cursor(std::max<int64_t>(1, static_cast<int64_t>(data.long_set.size())),
                              cfg.seed, "shuffle.long");
    for (int64_t s = 0; s < start_step; ++s) {
        if (length_schedule(s, cfg.total_steps) == 384) {
            long_cursor.skip(cfg.batch_long);
        } else {
            short_cursor.skip(cfg.batch_short);
        }
    }

    PretrainRunResult result;
    result.frozen = opt.frozen();
    bool frozen_applied = !opt.frozen().empty();

    for (int64_t step = start_step; step < cfg.total_steps; ++step) {
        const int64_t sched = length_schedule(step, cfg.total_steps);
        const bool long_tier = sched == 384;

        StepRecord rec;
        rec.step = step;
        rec.scheduled_len = sched;

        if (freeze.enabled && !frozen_applied && freeze.trigger_step &&
            step >= *freeze.trigger_step) {
            result.frozen = apply_freeze(model);
            opt.freeze(result.frozen);
            result.freeze_step = step;
            frozen_applied = true;
            rec.froze_here = true;
        }

        auto& cursor = long_tier ? long_cursor : short_cursor;
        const auto& pool = long_tier ? data.long_set : data.short_set;
        const int64_t bs = long_tier ? cfg.batch_long : cfg.batch_short;
        std::vector<PretrainExample> batch;
        batch.reserve(static_cast<size_t>(bs));
        for (int64_t i = 0; i < bs; ++i) {
            batch.push_back(pool[static_cast<size_t>(cursor.next_index())]);
        }

        Rng step_rng = stream_rng(cfg.seed, "dropout", static_cast<uint64_t>(step));
        {
            GradTape tape;
            PretrainLossBreakdown breakdown = pretrain_loss(model, batch, true, &step_rng);
            rec.total = breakdown.total.item();
            rec.mlm = breakdown.mlm_loss.item();
            if (breakdown.nsp_loss) rec.nsp = breakdown.nsp_loss->item();
            if (breakdown.bigram_loss) rec.bigram = breakdown.bigram_loss->item();
            check_finite_loss(rec.total, step);
            tape.backward(breakdown.total);
        }
        opt.step();
        opt.zero_grad();

        if (freeze.enabled && !frozen_applied && freeze.nsp_loss_threshold && rec.nsp &&
            *rec.nsp <= *freeze.nsp_loss_threshold) {
            result.frozen = apply_freeze(model);
            opt.freeze(result.frozen);
            result.freeze_step = step + 1;
            frozen_applied = true;
        }

        result.log.push_back(rec);
        if (on_step) on_step(rec);
        if (checkpoint_hook && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.total_steps) {
            checkpoint_hook(step + 1);
        }
    }
    if (checkpoint_hook) checkpoint_hook(cfg.total_steps);
    return result;
}

FinetuneRunResult finetune_run(FinetuneModel& model, AdamAmsgrad& opt,
                               std::span<const FinetuneExample> examples,
                               const TrainConfig& cfg, int64_t start_step,
                               const std::function<void(const FtStepRecord&)>& on_step,
                               const std::function<void(int64_t)>& checkpoint_hook) {
    if (cfg.total_steps <= 0) throw ConfigError("finetune: total_steps must be positive");
    if (examples.empty()) throw DataError("finetune: no examples");

    std::vector<FinetuneExample> pool(examples.begin(), examples.end());
    ExampleCursor ft_cursor(static_cast<int64_t>(pool.size()), cfg.seed, "shuffle.ft");
    ft_cursor.skip(start_step * cfg.batch_short);

    FinetuneRunResult result;
    for (int64_t step = start_step; step < cfg.total_steps; ++step) {
        std::vector<const FinetuneExample*> batch;
        batch.reserve(static_cast<size_t>(cfg.batch_short));
        for (int64_t i = 0; i < cfg.batch_short; ++i) {
            batch.push_back(&pool[static_cast<size_t>(ft_cursor.next_index())]);
        }

        Rng step_rng = stream_rng(cfg.seed, "dropout.ft", static_cast<uint64_t>(step));
        FtStepRecord rec;
        rec.step = step;
        {
            GradTape tape;
            Tensor loss;
            for (const FinetuneExample* ex : batch) {
                Tensor l = model.task == FtTask::qa ? qa_loss(model, *ex, true, &step_rng)
                                                    : nli_loss(model, *ex, true, &step_rng);
                loss = loss.defined() ? add(loss, l) : l;
            }
            if (batch.size() > 1) loss = scale(loss, 1.0 / static_cast<double>(batch.size()));
            rec.loss = loss.item();
            check_finite_loss(rec.loss, step);
            tape.backward(loss);
        }
        opt.step();
        opt.zero_grad();

        result.log.push_back(rec);
        if (on_step) on_step(rec);
        if (checkpoint_hook && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.total_steps) {
            checkpoint_hook(step + 1);
        }
    }
    if (checkpoint_hook) checkpoint_hook(cfg.total_steps);
    return result;
}

} // namespace bertlab
