// bertlab command-line driver: data construction, pre-training, fine-tuning,
// probing, evaluation, and the placement/concat sweep runner.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bertlab/checkpoint.hpp"
#include "bertlab/config.hpp"
#include "bertlab/eval.hpp"
#include "bertlab/report.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace bertlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

ExperimentConfig load_config(const CommonArgs& args) {
    return ExperimentConfig::from_file(args.config_path, args.overrides);
}

std::string step_dir(const std::string& base, int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step-%06lld", static_cast<long long>(step));
    return (fs::path(base) / buf).string();
}

Vocab load_vocab_for(const ExperimentConfig& cfg) {
    const fs::path p = fs::path(cfg.data_dir) / "vocab.txt";
    if (!fs::exists(p)) {
        throw DataError("vocab file " + p.string() + " not found; run `bertlab build-data` first");
    }
    return Vocab::load(p.string());
}

PretrainDataset load_pretrain_dataset(const ExperimentConfig& cfg) {
    const fs::path dir(cfg.data_dir);
    const fs::path short_path = dir / "examples_short.jsonl";
    const fs::path long_path = dir / "examples_long.jsonl";
    if (!fs::exists(short_path)) {
        throw DataError("example file " + short_path.string() +
                        " not found; run `bertlab build-data` first");
    }
    PretrainDataset data;
    data.short_set = read_pretrain_examples(short_path.string());
    if (fs::exists(long_path)) data.long_set = read_pretrain_examples(long_path.string());
    return data;
}

CheckpointMeta make_meta(const ExperimentConfig& cfg, const std::string& kind, int64_t step,
                         int64_t vocab_size, uint64_t vocab_checksum) {
    CheckpointMeta meta;
    meta.kind = kind;
    meta.step = step;
    meta.seed = cfg.seed;
    meta.config_hash = cfg.hash_hex();
    meta.config_text = cfg.canonical();
    meta.vocab_checksum = vocab_checksum;
    meta.encoder = cfg.encoder_config(vocab_size);
    meta.placement = cfg.effective_placement();
    meta.pt_concat = cfg.pt_concat;
    meta.ft_concat = cfg.ft_concat;
    meta.task = cfg.ft_task;
    return meta;
}

void report_rows(const ExperimentConfig& cfg, std::span<const MetricRow> rows) {
    const fs::path reports = fs::path(cfg.out_dir) / "reports";
    fs::create_directories(reports);
    append_metric_rows_jsonl((reports / "metrics.jsonl").string(), rows);
    append_metric_rows_csv((reports / "metrics.csv").string(), rows);
}

std::string placement_str(const HeadPlacement& p) {
    return std::to_string(p.mlm_layer) + ":" + std::to_string(p.nsp_layer);
}

MetricRow base_row(const ExperimentConfig& cfg) {
    MetricRow r;
    r.variant = to_string(cfg.variant);
    r.placement = placement_str(cfg.effective_placement());
    r.pt_concat = to_string(cfg.pt_concat);
    r.ft_concat = to_string(cfg.ft_concat);
    r.seed = cfg.seed;
    r.config_hash = cfg.hash_hex();
    return r;
}

// ---------------------------------------------------------------------------
// build-data
// ---------------------------------------------------------------------------

int cmd_build_data(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    if (cfg.corpus.empty()) throw ConfigError("data.corpus must point at a corpus file");
    const std::vector<Document> docs = read_corpus_file(cfg.corpus);
    if (docs.empty()) throw DataError("corpus " + cfg.corpus + " contains no paragraphs");

    const Vocab vocab = build_vocab(docs, cfg.min_freq);
    fs::create_directories(cfg.data_dir);
    vocab.save((fs::path(cfg.data_dir) / "vocab.txt").string());

    Rng pair_rng = stream_rng(cfg.seed, "nsp_pairs");
    NspPairSet pairs = make_nsp_pairs(docs, pair_rng);
    if (pairs.imbalance) {
        std::cerr << "warning: single usable document; only is_next pairs were generated\n";
    }

    const bool corrupt_bigrams = cfg.effective_placement().bigram_enabled;
    MaskingConfig mask_cfg;
    mask_cfg.select_prob = cfg.mask_prob;

    auto build_set = [&](int64_t max_len, const char* tag) {
        std::vector<PretrainExample> out;
        out.reserve(pairs.pairs.size());
        for (size_t i = 0; i < pairs.pairs.size(); ++i) {
            PretrainExample ex = assemble_example(pairs.pairs[i], vocab, max_len);
            Rng mask_rng = stream_rng(cfg.seed, std::string("mask.") + tag, i);
            ex = apply_masking(std::move(ex), vocab, mask_rng, mask_cfg);
            if (corrupt_bigrams) {
                Rng bs_rng = stream_rng(cfg.seed, std::string("bigram.") + tag, i);
                ex = apply_bigram_shift(std::move(ex), bs_rng, cfg.bigram_swap_prob);
            }
            out.push_back(std::move(ex));
        }
        return out;
    };

    const auto short_set = build_set(cfg.short_len, "short");
    const auto long_set = build_set(cfg.long_len, "long");
    write_pretrain_examples((fs::path(cfg.data_dir) / "examples_short.jsonl").string(),
                            short_set);
    write_pretrain_examples((fs::path(cfg.data_dir) / "examples_long.jsonl").string(), long_set);

    DataManifest manifest;
    manifest.config_hash = cfg.hash_hex();
    manifest.seed = cfg.seed;
    manifest.vocab_checksum = vocab.checksum();
    manifest.short_count = static_cast<int64_t>(short_set.size());
    manifest.long_count = static_cast<int64_t>(long_set.size());
    manifest.short_len = cfg.short_len;
    manifest.long_len = cfg.long_len;
    write_data_manifest((fs::path(cfg.data_dir) / "manifest.json").string(), manifest);

    std::cout << "build-data: vocab " << vocab.size() << " tokens, " << short_set.size()
              << " short + " << long_set.size() << " long examples -> " << cfg.data_dir << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

int cmd_pretrain(const CommonArgs& args, const std::string& resume_path) {
    ExperimentConfig cfg = load_config(args);
    const Vocab vocab = load_vocab_for(cfg);
    PretrainDataset data = load_pretrain_dataset(cfg);

    PretrainModel model = PretrainModel::init(cfg.encoder_config(vocab.size()),
                                              cfg.effective_placement(), cfg.pt_concat, cfg.seed);
    AdamAmsgrad opt(model.named_parameters(),
                    AdamAmsgrad::Config{cfg.pt_lr, cfg.pt_weight_decay});
    int64_t start_step = 0;
    if (!resume_path.empty()) {
        LoadedCheckpoint ckpt = load_checkpoint(resume_path);
        if (ckpt.meta.config_hash != cfg.hash_hex()) {
            throw ConfigError("resume: checkpoint was produced by config " +
                              ckpt.meta.config_hash + ", current config is " + cfg.hash_hex());
        }
        restore_parameters(ckpt, model.named_parameters());
        restore_optimizer(ckpt, opt);
        start_step = ckpt.meta.step;
    }

    const std::string ckpt_base = (fs::path(cfg.out_dir) / "checkpoints").string();
    const std::string log_path =
        (fs::path(cfg.out_dir) / ("pretrain-" + cfg.hash_hex() + ".log.jsonl")).string();
    fs::create_directories(cfg.out_dir);
    std::ofstream log(log_path, std::ios::binary | std::ios::app);

    auto checkpoint_hook = [&](int64_t step) {
        save_checkpoint(step_dir(ckpt_base, step),
                        make_meta(cfg, "pretrain", step, vocab.size(), vocab.checksum()),
                        model.named_parameters(), &opt);
    };
    auto on_step = [&](const StepRecord& rec) {
        ojson j;
        j["step"] = rec.step;
        j["scheduled_len"] = rec.scheduled_len;
        j["total"] = rec.total;
        j["mlm"] = rec.mlm;
        if (rec.nsp) j["nsp"] = *rec.nsp;
        if (rec.bigram) j["bigram"] = *rec.bigram;
        if (rec.froze_here) j["froze"] = true;
        log << j.dump() << '\n';
    };

    PretrainRunResult result = pretrain(model, opt, data, cfg.pretrain_train_config(),
                                        cfg.freeze_policy(), start_step, on_step,
                                        checkpoint_hook);

    std::vector<MetricRow> rows;
    const StepRecord& last = result.log.back();
    MetricRow r = base_row(cfg);
    r.task = "pretrain";
    r.step = last.step + 1;
    r.metric = "total_loss";
    r.value = last.total;
    rows.push_back(r);
    r.metric = "mlm_loss";
    r.value = last.mlm;
    rows.push_back(r);
    if (last.nsp) {
        r.metric = "nsp_loss";
        r.value = *last.nsp;
        rows.push_back(r);
    }
    if (last.bigram) {
        r.metric = "bigram_loss";
        r.value = *last.bigram;
        rows.push_back(r);
    }
    report_rows(cfg, rows);

    std::cout << "pretrain: " << cfg.pt_total_steps << " steps done, final total loss "
              << last.total << ", checkpoint " << step_dir(ckpt_base, cfg.pt_total_steps)
              << "\n";
    if (result.freeze_step >= 0) {
        std::cout << "pretrain: NSP-freeze engaged at step " << result.freeze_step << " ("
                  << result.frozen.size() << " parameters)\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

int cmd_finetune(const CommonArgs& args, const std::string& checkpoint_path) {
    ExperimentConfig cfg = load_config(args);
    if (checkpoint_path.empty()) throw ConfigError("finetune requires --checkpoint");
    LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
    PretrainModel pretrained = rebuild_pretrain_model(ckpt);

    // Structural validation happens before any data is read or compute runs.
    FinetuneModel model =
        FinetuneModel::from_pretrained(pretrained, cfg.ft_task, cfg.ft_concat, cfg.seed);

    if (cfg.ft_records.empty()) throw ConfigError("finetune.records must point at a JSONL file");
    FinetuneBuildResult built;
    const Vocab vocab = load_vocab_for(cfg);
    if (vocab.checksum() != ckpt.meta.vocab_checksum) {
        throw DataError("finetune: vocab checksum does not match the checkpoint's vocabulary");
    }
    if (cfg.ft_task == FtTask::qa) {
        auto records = read_qa_records(cfg.ft_records);
        built = build_qa_examples(records, vocab, cfg.ft_max_len);
    } else {
        auto records = read_nli_records(cfg.ft_records);
        built = build_nli_examples(records, vocab, cfg.ft_max_len);
    }
    if (built.skipped > 0) {
        std::cerr << "finetune: skipped " << built.skipped
                  << " records with unrecoverable answer spans\n";
    }
    if (built.examples.empty()) throw DataError("finetune: no usable examples");

    AdamAmsgrad opt(model.trainable_parameters(),
                    AdamAmsgrad::Config{cfg.ft_lr, cfg.ft_weight_decay});
    const std::string ckpt_base = (fs::path(cfg.out_dir) / "finetune").string();
    auto checkpoint_hook = [&](int64_t step) {
        save_checkpoint(step_dir(ckpt_base, step),
                        make_meta(cfg, "finetune", step, vocab.size(), vocab.checksum()),
                        model.named_parameters(), &opt);
    };

    FinetuneRunResult result = finetune_run(model, opt, built.examples,
                                            cfg.finetune_train_config(), 0, {}, checkpoint_hook);

    std::vector<MetricRow> rows;
    MetricRow r = base_row(cfg);
    r.task = to_string(cfg.ft_task);
    r.step = cfg.ft_steps;
    r.metric = "train_loss";
    r.value = result.log.back().loss;
    rows.push_back(r);

    std::span<const FinetuneExample> eval_set = built.examples;
    FinetuneBuildResult eval_built;
    if (!cfg.ft_eval_records.empty()) {
        if (cfg.ft_task == FtTask::qa) {
            auto records = read_qa_records(cfg.ft_eval_records);
            eval_built = build_qa_examples(records, vocab, cfg.ft_max_len);
        } else {
            auto records = read_nli_records(cfg.ft_eval_records);
            eval_built = build_nli_examples(records, vocab, cfg.ft_max_len);
        }
        eval_set = eval_built.examples;
    }
    if (cfg.ft_task == FtTask::qa) {
        QaMetrics m = evaluate_qa(model, eval_set);
        r.metric = "em";
        r.value = m.em;
        rows.push_back(r);
        r.metric = "f1";
        r.value = m.f1;
        rows.push_back(r);
        std::cout << "finetune: EM " << m.em << " F1 " << m.f1 << " over " << m.count
                  << " examples\n";
    } else {
        const double acc = evaluate_nli(model, eval_set);
        r.metric = "accuracy";
        r.value = acc;
        rows.push_back(r);
        std::cout << "finetune: accuracy " << acc << "\n";
    }
    report_rows(cfg, rows);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

int cmd_probe(const CommonArgs& args, const std::string& checkpoint_path) {
    ExperimentConfig cfg = load_config(args);
    if (checkpoint_path.empty()) throw ConfigError("probe requires --checkpoint");
    LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
    PretrainModel model = rebuild_pretrain_model(ckpt);

    if (cfg.corpus.empty()) throw ConfigError("data.corpus must point at a corpus file");
    const std::vector<Document> docs = read_corpus_file(cfg.corpus);
    const Vocab vocab = load_vocab_for(cfg);
    if (vocab.checksum() != ckpt.meta.vocab_checksum) {
        throw DataError("probe: vocab checksum does not match the checkpoint's vocabulary");
    }

    Rng rng = stream_rng(cfg.seed, "probe.data");
    std::vector<ProbeDataset> datasets =
        synthetic_probe_datasets(docs, vocab, rng, cfg.probe_options());

    std::vector<MetricRow> rows;
    for (const ProbeDataset& ds : datasets) {
        ProbeResult res = probe_run(model, ds, cfg.probe_config());
        MetricRow r = base_row(cfg);
        r.task = "probe." + ds.name;
        r.metric = "accuracy";
        r.value = res.best_val_accuracy;
        r.step = ckpt.meta.step;
        rows.push_back(r);
        std::cout << "probe " << ds.name << ": " << res.best_val_accuracy << " ("
                  << res.train_count << " train / " << res.val_count << " val)\n";
    }
    report_rows(cfg, rows);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path,
             const std::string& data_path) {
    ExperimentConfig cfg = load_config(args);
    if (checkpoint_path.empty()) throw ConfigError("eval requires --checkpoint");
    LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
    FinetuneModel model = rebuild_finetune_model(ckpt);

    const std::string records_path = !data_path.empty()          ? data_path
                                     : !cfg.ft_eval_records.empty() ? cfg.ft_eval_records
                                                                    : cfg.ft_records;
    if (records_path.empty()) {
        throw ConfigError("eval: no records given (use --data or finetune.eval_records)");
    }
    const Vocab vocab = load_vocab_for(cfg);
    if (vocab.checksum() != ckpt.meta.vocab_checksum) {
        throw DataError("eval: vocab checksum does not match the checkpoint's vocabulary");
    }

    std::vector<MetricRow> rows;
    MetricRow r = base_row(cfg);
    r.task = to_string(ckpt.meta.task);
    r.step = ckpt.meta.step;
    if (ckpt.meta.task == FtTask::qa) {
        auto records = read_qa_records(records_path);
        auto built = build_qa_examples(records, vocab, cfg.ft_max_len);
        QaMetrics m = evaluate_qa(model, built.examples);
        r.metric = "em";
        r.value = m.em;
        rows.push_back(r);
        r.metric = "f1";
        r.value = m.f1;
        rows.push_back(r);
        std::cout << "eval: EM " << m.em << " F1 " << m.f1 << " over " << m.count
                  << " examples\n";
    } else {
        auto records = read_nli_records(records_path);
        auto built = build_nli_examples(records, vocab, cfg.ft_max_len);
        const double acc = evaluate_nli(model, built.examples);
        r.metric = "accuracy";
        r.value = acc;
        rows.push_back(r);
        std::cout << "eval: accuracy " << acc << "\n";
    }
    report_rows(cfg, rows);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

int cmd_sweep(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    const SweepSpec spec = parse_sweep_spec(cfg);
    const Vocab vocab = load_vocab_for(cfg);
    PretrainDataset data = load_pretrain_dataset(cfg);

    const fs::path reports = fs::path(cfg.out_dir) / "reports";
    fs::create_directories(reports);
    std::ofstream rejections((reports / "sweep_rejections.jsonl").string(),
                             std::ios::binary | std::ios::app);

    int64_t valid_cells = 0, rejected_cells = 0;
    std::vector<MetricRow> rows;
    for (const HeadPlacement& placement : spec.placements) {
        for (ConcatMode pt : spec.pt_concats) {
            for (ConcatMode ft : spec.ft_concats) {
                for (uint64_t seed : spec.seeds) {
                    ExperimentConfig cell = cfg;
                    cell.mlm_layer = placement.mlm_layer;
                    cell.nsp_layer = placement.nsp_layer;
                    cell.pt_concat = pt;
                    cell.ft_concat = ft;
                    cell.seed = seed;
                    if (cell.sweep_steps > 0) cell.pt_total_steps = cell.sweep_steps;
                    const std::string cell_id =
                        placement_str(placement) + "/pt=" + to_string(pt) +
                        "/ft=" + to_string(ft) + "/seed=" + std::to_string(seed);
                    try {
                        cell.validate();
                    } catch (const ConfigError& e) {
                        ojson j;
                        j["cell"] = cell_id;
                        j["reason"] = e.what();
                        rejections << j.dump() << '\n';
                        ++rejected_cells;
                        std::cout << "sweep: rejected " << cell_id << ": " << e.what() << "\n";
                        continue;
                    }

                    // Each cell trains its own model from its own seed; no
                    // state is shared between cells.
                    PretrainModel model =
                        PretrainModel::init(cell.encoder_config(vocab.size()),
                                            cell.effective_placement(), pt, seed);
                    AdamAmsgrad opt(model.named_parameters(),
                                    AdamAmsgrad::Config{cell.pt_lr, cell.pt_weight_decay});
                    TrainConfig tc = cell.pretrain_train_config();
                    PretrainRunResult result =
                        pretrain(model, opt, data, tc, cell.freeze_policy());

                    MetricRow r = base_row(cell);
                    r.task = "sweep";
                    r.metric = "pretrain_total_loss";
                    r.value = result.log.back().total;
                    r.step = tc.total_steps;
                    rows.push_back(r);
                    ++valid_cells;
                    std::cout << "sweep: cell " << cell_id << " final loss " << r.value << "\n";
                }
            }
        }
    }
    report_rows(cfg, rows);
    std::cout << "sweep: " << valid_cells << " cells run, " << rejected_cells << " rejected\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"bertlab: desk-scale hierarchical multitask BERT pre-training"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string resume_path, checkpoint_path, data_path;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "experiment config file")->required();
        sub->add_option("--set", common.overrides, "override: section.key=value")
            ->take_all();
    };

    CLI::App* build_data = app.add_subcommand("build-data", "construct pre-training examples");
    add_common(build_data);

    CLI::App* pretrain_cmd = app.add_subcommand("pretrain", "run multitask pre-training");
    add_common(pretrain_cmd);
    pretrain_cmd->add_option("--resume", resume_path, "checkpoint directory to resume from");

    CLI::App* finetune_cmd = app.add_subcommand("finetune", "fine-tune on qa or nli");
    add_common(finetune_cmd);
    finetune_cmd->add_option("--checkpoint", checkpoint_path, "pretrain checkpoint directory");

    CLI::App* probe_cmd = app.add_subcommand("probe", "run synthetic probing tasks");
    add_common(probe_cmd);
    probe_cmd->add_option("--checkpoint", checkpoint_path, "pretrain checkpoint directory");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint_path, "finetune checkpoint directory");
    eval_cmd->add_option("--data", data_path, "records file (JSONL)");

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "placement x concat x seed matrix");
    add_common(sweep_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (build_data->parsed()) return cmd_build_data(common);
        if (pretrain_cmd->parsed()) return cmd_pretrain(common, resume_path);
        if (finetune_cmd->parsed()) return cmd_finetune(common, checkpoint_path);
        if (probe_cmd->parsed()) return cmd_probe(common, checkpoint_path);
        if (eval_cmd->parsed()) return cmd_eval(common, checkpoint_path, data_path);
        if (sweep_cmd->parsed()) return cmd_sweep(common);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitData;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
