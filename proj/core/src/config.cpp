#include "bertlab/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace bertlab {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

using KvMap = std::map<std::string, std::string>; // "section.key" -> value

KvMap parse_ini(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line, section;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unterminated section header");
            }
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        if (section.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": key outside any [section]");
        }
        kv[section + "." + key] = value;
    }
    return kv;
}

int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + ": expected integer, got '" + v + "'");
    }
}

uint64_t to_uint(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + ": expected unsigned integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + ": expected number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: " + key + ": expected boolean, got '" + v + "'");
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            const std::string t = trim(cur);
            if (!t.empty()) out.push_back(t);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    const std::string t = trim(cur);
    if (!t.empty()) out.push_back(t);
    return out;
}

} // namespace

const char* to_string(Variant v) {
    switch (v) {
    case Variant::bert_baseline: return "bert_baseline";
    case Variant::lower_nsp: return "lower_nsp";
    case Variant::lower_mask: return "lower_mask";
    case Variant::lower_nsp_freeze: return "lower_nsp_freeze";
    case Variant::without_nsp: return "without_nsp";
    case Variant::bigram_shift: return "bigram_shift";
    }
    return "bert_baseline";
}

Variant variant_from_string(const std::string& s) {
    if (s == "bert_baseline") return Variant::bert_baseline;
    if (s == "lower_nsp") return Variant::lower_nsp;
    if (s == "lower_mask") return Variant::lower_mask;
    if (s == "lower_nsp_freeze") return Variant::lower_nsp_freeze;
    if (s == "without_nsp") return Variant::without_nsp;
    if (s == "bigram_shift") return Variant::bigram_shift;
    throw ConfigError("unknown variant '" + s +
                      "' (expected bert_baseline|lower_nsp|lower_mask|lower_nsp_freeze|"
                      "without_nsp|bigram_shift)");
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text,
                                             const std::vector<std::string>& overrides) {
    KvMap kv = parse_ini(text);
    for (const std::string& ov : overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos || ov.find('.') == std::string::npos ||
            ov.find('.') > eq) {
            throw ConfigError("override '" + ov + "' must look like section.key=value");
        }
        kv[trim(ov.substr(0, eq))] = trim(ov.substr(eq + 1));
    }

    ExperimentConfig c;
    std::map<std::string, bool> seen;
    auto take = [&](const char* key, auto&& bind) {
        auto it = kv.find(key);
        seen[key] = true;
        if (it != kv.end()) bind(it->second);
    };

    take("experiment.variant", [&](const std::string& v) { c.variant = variant_from_string(v); });
    take("experiment.seed", [&](const std::string& v) { c.seed = to_uint("experiment.seed", v); });
    take("experiment.out_dir", [&](const std::string& v) { c.out_dir = v; });

    take("model.num_layers", [&](const std::string& v) { c.num_layers = to_int("model.num_layers", v); });
    take("model.num_heads", [&](const std::string& v) { c.num_heads = to_int("model.num_heads", v); });
    take("model.hidden_size", [&](const std::string& v) { c.hidden_size = to_int("model.hidden_size", v); });
    take("model.ff_size", [&](const std::string& v) { c.ff_size = to_int("model.ff_size", v); });
    take("model.max_position", [&](const std::string& v) { c.max_position = to_int("model.max_position", v); });
    take("model.dropout", [&](const std::string& v) { c.dropout = to_double("model.dropout", v); });

    take("placement.mlm_layer", [&](const std::string& v) { c.mlm_layer = to_int("placement.mlm_layer", v); });
    take("placement.nsp_layer", [&](const std::string& v) { c.nsp_layer = to_int("placement.nsp_layer", v); });

    take("concat.pt", [&](const std::string& v) { c.pt_concat = concat_mode_from_string(v); });
    take("concat.ft", [&](const std::string& v) { c.ft_concat = concat_mode_from_string(v); });

    take("data.corpus", [&](const std::string& v) { c.corpus = v; });
    take("data.dir", [&](const std::string& v) { c.data_dir = v; });
    take("data.min_freq", [&](const std::string& v) { c.min_freq = to_int("data.min_freq", v); });
    take("data.short_len", [&](const std::string& v) { c.short_len = to_int("data.short_len", v); });
    take("data.long_len", [&](const std::string& v) { c.long_len = to_int("data.long_len", v); });
    take("data.mask_prob", [&](const std::string& v) { c.mask_prob = to_double("data.mask_prob", v); });
    take("data.bigram_swap_prob",
         [&](const std::string& v) { c.bigram_swap_prob = to_double("data.bigram_swap_prob", v); });

    take("pretrain.lr", [&](const std::string& v) { c.pt_lr = to_double("pretrain.lr", v); });
    take("pretrain.weight_decay",
         [&](const std::string& v) { c.pt_weight_decay = to_double("pretrain.weight_decay", v); });
    take("pretrain.total_steps",
         [&](const std::string& v) { c.pt_total_steps = to_int("pretrain.total_steps", v); });
    take("pretrain.batch_short",
         [&](const std::string& v) { c.batch_short = to_int("pretrain.batch_short", v); });
    take("pretrain.batch_long",
         [&](const std::string& v) { c.batch_long = to_int("pretrain.batch_long", v); });
    take("pretrain.checkpoint_every",
         [&](const std::string& v) { c.checkpoint_every = to_int("pretrain.checkpoint_every", v); });
    take("pretrain.freeze", [&](const std::string& v) { c.freeze_enabled = to_bool("pretrain.freeze", v); });
    take("pretrain.freeze_step",
         [&](const std::string& v) { c.freeze_step = to_int("pretrain.freeze_step", v); });
    take("pretrain.freeze_nsp_loss",
         [&](const std::string& v) { c.freeze_nsp_loss = to_double("pretrain.freeze_nsp_loss", v); });

    take("finetune.task", [&](const std::string& v) { c.ft_task = ft_task_from_string(v); });
    take("finetune.lr", [&](const std::string& v) { c.ft_lr = to_double("finetune.lr", v); });
    take("finetune.weight_decay",
         [&](const std::string& v) { c.ft_weight_decay = to_double("finetune.weight_decay", v); });
    take("finetune.steps", [&](const std::string& v) { c.ft_steps = to_int("finetune.steps", v); });
    take("finetune.batch", [&](const std::string& v) { c.ft_batch = to_int("finetune.batch", v); });
    take("finetune.max_len", [&](const std::string& v) { c.ft_max_len = to_int("finetune.max_len", v); });
    take("finetune.records", [&](const std::string& v) { c.ft_records = v; });
    take("finetune.eval_records", [&](const std::string& v) { c.ft_eval_records = v; });

    take("probe.epochs", [&](const std::string& v) { c.probe_epochs = to_int("probe.epochs", v); });
    take("probe.lr", [&](const std::string& v) { c.probe_lr = to_double("probe.lr", v); });
    take("probe.batch", [&](const std::string& v) { c.probe_batch = to_int("probe.batch", v); });
    take("probe.val_fraction",
         [&](const std::string& v) { c.probe_val_fraction = to_double("probe.val_fraction", v); });
    take("probe.length_classes",
         [&](const std::string& v) { c.probe_length_classes = to_int("probe.length_classes", v); });
    take("probe.word_classes",
         [&](const std::string& v) { c.probe_word_classes = to_int("probe.word_classes", v); });
    take("probe.min_per_class",
         [&](const std::string& v) { c.probe_min_per_class = to_int("probe.min_per_class", v); });

    take("sweep.placements", [&](const std::string& v) { c.sweep_placements = v; });
    take("sweep.pt_concats", [&](const std::string& v) { c.sweep_pt_concats = v; });
    take("sweep.ft_concats", [&](const std::string& v) { c.sweep_ft_concats = v; });
    take("sweep.seeds", [&](const std::string& v) { c.sweep_seeds = v; });
    take("sweep.steps", [&](const std::string& v) { c.sweep_steps = to_int("sweep.steps", v); });

    for (const auto& [key, value] : kv) {
        if (!seen.count(key)) throw ConfigError("config: unknown key '" + key + "'");
    }

    if (c.variant == Variant::lower_nsp_freeze) c.freeze_enabled = true;
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path,
                                             const std::vector<std::string>& overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str(), overrides);
}

HeadPlacement ExperimentConfig::effective_placement() const {
    HeadPlacement p;
    p.nsp_enabled = variant != Variant::without_nsp;
    p.bigram_enabled = variant == Variant::bigram_shift;
    const int64_t L = num_layers;
    const int64_t mid = std::max<int64_t>(1, L / 2);
    switch (variant) {
    case Variant::lower_nsp:
    case Variant::lower_nsp_freeze:
        p.mlm_layer = mlm_layer > 0 ? mlm_layer : L;
        p.nsp_layer = nsp_layer > 0 ? nsp_layer : mid;
        break;
    case Variant::lower_mask:
        p.mlm_layer = mlm_layer > 0 ? mlm_layer : mid;
        p.nsp_layer = nsp_layer > 0 ? nsp_layer : L;
        break;
    default:
        p.mlm_layer = mlm_layer > 0 ? mlm_layer : L;
        p.nsp_layer = nsp_layer > 0 ? nsp_layer : L;
        break;
    }
    return p;
}

void ExperimentConfig::validate() const {
    if (num_layers <= 0 || num_heads <= 0 || hidden_size <= 0 || ff_size <= 0) {
        throw ConfigError("config: model dimensions must be positive");
    }
    if (hidden_size % num_heads != 0) {
        throw ConfigError("config: hidden_size " + std::to_string(hidden_size) +
                          " is not divisible by num_heads " + std::to_string(num_heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ConfigError("config: dropout must be in [0,1)");
    }
    if (max_position < long_len) {
        throw ConfigError("config: max_position " + std::to_string(max_position) +
                          " is smaller than the long example length " + std::to_string(long_len));
    }
    if (short_len > long_len) {
        throw ConfigError("config: short_len exceeds long_len");
    }
    if (mask_prob <= 0.0 || mask_prob >= 1.0 || bigram_swap_prob < 0.0 ||
        bigram_swap_prob >= 1.0) {
        throw ConfigError("config: corruption probabilities must lie in (0,1)");
    }

    const HeadPlacement p = effective_placement();
    p.validate(num_layers);
    const int64_t L = num_layers;
    switch (variant) {
    case Variant::bert_baseline:
    case Variant::bigram_shift:
    case Variant::without_nsp:
        if (p.mlm_layer != L || p.nsp_layer != L) {
            throw ConfigError(std::string("config: variant ") + to_string(variant) +
                              " requires both heads at the top layer (mlm_layer = nsp_layer = " +
                              std::to_string(L) + ")");
        }
        break;
    case Variant::lower_nsp:
    case Variant::lower_nsp_freeze:
        if (!(p.nsp_layer < p.mlm_layer && p.mlm_layer == L)) {
            throw ConfigError("config: lower_nsp requires nsp_layer < mlm_layer = " +
                              std::to_string(L));
        }
        break;
    case Variant::lower_mask:
        if (!(p.mlm_layer < p.nsp_layer && p.nsp_layer == L)) {
            throw ConfigError("config: lower_mask requires mlm_layer < nsp_layer = " +
                              std::to_string(L));
        }
        break;
    }

    if (variant == Variant::without_nsp) {
        if (pt_concat == ConcatMode::nsp_output || ft_concat == ConcatMode::nsp_output) {
            throw ConfigError("config: concat mode 'nsp' is inconsistent with variant "
                              "without_nsp (no NSP classifier exists)");
        }
        if (freeze_enabled) {
            throw ConfigError("config: NSP-freeze is inconsistent with variant without_nsp");
        }
    }
    if (ft_task == FtTask::nli && ft_concat != ConcatMode::none) {
        throw ConfigError("config: NLI fine-tuning uses only the [CLS] embedding from the NSP "
                          "level; concat.ft must be 'none'");
    }
    if (pt_total_steps <= 0 || ft_steps <= 0) {
        throw ConfigError("config: step counts must be positive");
    }
    if (batch_short <= 0 || batch_long <= 0 || ft_batch <= 0) {
        throw ConfigError("config: batch sizes must be positive");
    }
    if (probe_val_fraction <= 0.0 || probe_val_fraction >= 1.0) {
        throw ConfigError("config: probe.val_fraction must be in (0,1)");
    }
    if (probe_length_classes < 2 || probe_word_classes < 2 || probe_min_per_class < 1) {
        throw ConfigError("config: probe classes must be >= 2 with min_per_class >= 1");
    }
}

EncoderConfig ExperimentConfig::encoder_config(int64_t vocab_size) const {
    EncoderConfig e;
    e.num_layers = num_layers;
    e.num_heads = num_heads;
    e.hidden_size = hidden_size;
    e.ff_size = ff_size;
    e.max_position = max_position;
    e.vocab_size = vocab_size;
    e.dropout_p = dropout;
    return e;
}

TrainConfig ExperimentConfig::pretrain_train_config() const {
    TrainConfig t;
    t.lr = pt_lr;
    t.weight_decay = pt_weight_decay;
    t.total_steps = pt_total_steps;
    t.batch_short = batch_short;
    t.batch_long = batch_long;
    t.seed = seed;
    t.checkpoint_every = checkpoint_every;
    return t;
}

TrainConfig ExperimentConfig::finetune_train_config() const {
    TrainConfig t;
    t.lr = ft_lr;
    t.weight_decay = ft_weight_decay;
    t.total_steps = ft_steps;
    t.batch_short = ft_batch;
    t.batch_long = 1;
    t.seed = seed;
    t.checkpoint_every = checkpoint_every;
    return t;
}

FreezePolicy ExperimentConfig::freeze_policy() const {
    FreezePolicy f;
    f.enabled = freeze_enabled;
    if (!f.enabled) return f;
    f.trigger_step = freeze_step > 0 ? freeze_step : pt_total_steps / 2;
    if (freeze_nsp_loss > 0.0) f.nsp_loss_threshold = freeze_nsp_loss;
    return f;
}

ProbeConfig ExperimentConfig::probe_config() const {
    ProbeConfig p;
    p.lr = probe_lr;
    p.batch = probe_batch;
    p.epochs = probe_epochs;
    p.val_fraction = probe_val_fraction;
    p.seed = seed;
    return p;
}

ProbeOptions ExperimentConfig::probe_options() const {
    ProbeOptions o;
    o.length_classes = probe_length_classes;
    o.word_content_classes = probe_word_classes;
    o.min_per_class = probe_min_per_class;
    return o;
}

std::string ExperimentConfig::canonical() const {
    // Every effective value, sorted, one per line. This text defines the hash.
    std::map<std::string, std::string> kv;
    kv["concat.ft"] = to_string(ft_concat);
    kv["concat.pt"] = to_string(pt_concat);
    kv["data.bigram_swap_prob"] = fmt_double(bigram_swap_prob);
    kv["data.corpus"] = corpus;
    kv["data.dir"] = data_dir;
    kv["data.long_len"] = std::to_string(long_len);
    kv["data.mask_prob"] = fmt_double(mask_prob);
    kv["data.min_freq"] = std::to_string(min_freq);
    kv["data.short_len"] = std::to_string(short_len);
    kv["experiment.out_dir"] = out_dir;
    kv["experiment.seed"] = std::to_string(seed);
    kv["experiment.variant"] = to_string(variant);
    kv["finetune.batch"] = std::to_string(ft_batch);
    kv["finetune.eval_records"] = ft_eval_records;
    kv["finetune.lr"] = fmt_double(ft_lr);
    kv["finetune.max_len"] = std::to_string(ft_max_len);
    kv["finetune.records"] = ft_records;
    kv["finetune.steps"] = std::to_string(ft_steps);
    kv["finetune.task"] = to_string(ft_task);
    kv["finetune.weight_decay"] = fmt_double(ft_weight_decay);
    kv["model.dropout"] = fmt_double(dropout);
    kv["model.ff_size"] = std::to_string(ff_size);
    kv["model.hidden_size"] = std::to_string(hidden_size);
    kv["model.max_position"] = std::to_string(max_position);
    kv["model.num_heads"] = std::to_string(num_heads);
    kv["model.num_layers"] = std::to_string(num_layers);
    const HeadPlacement p = effective_placement();
    kv["placement.mlm_layer"] = std::to_string(p.mlm_layer);
    kv["placement.nsp_layer"] = std::to_string(p.nsp_layer);
    kv["pretrain.batch_long"] = std::to_string(batch_long);
    kv["pretrain.batch_short"] = std::to_string(batch_short);
    kv["pretrain.checkpoint_every"] = std::to_string(checkpoint_every);
    kv["pretrain.freeze"] = freeze_enabled ? "true" : "false";
    kv["pretrain.freeze_nsp_loss"] = fmt_double(freeze_nsp_loss);
    kv["pretrain.freeze_step"] = std::to_string(freeze_step);
    kv["pretrain.lr"] = fmt_double(pt_lr);
    kv["pretrain.total_steps"] = std::to_string(pt_total_steps);
    kv["pretrain.weight_decay"] = fmt_double(pt_weight_decay);
    kv["probe.batch"] = std::to_string(probe_batch);
    kv["probe.epochs"] = std::to_string(probe_epochs);
    kv["probe.lr"] = fmt_double(probe_lr);
    kv["probe.length_classes"] = std::to_string(probe_length_classes);
    kv["probe.min_per_class"] = std::to_string(probe_min_per_class);
    kv["probe.val_fraction"] = fmt_double(probe_val_fraction);
    kv["probe.word_classes"] = std::to_string(probe_word_classes);
    kv["sweep.ft_concats"] = sweep_ft_concats;
    kv["sweep.placements"] = sweep_placements;
    kv["sweep.pt_concats"] = sweep_pt_concats;
    kv["sweep.seeds"] = sweep_seeds;
    kv["sweep.steps"] = std::to_string(sweep_steps);

    std::string out;
    for (const auto& [key, value] : kv) {
        out += key;
        out += " = ";
        out += value;
        out += '\n';
    }
    return out;
}

std::string ExperimentConfig::hash_hex() const {
    const std::string text = canonical();
    const uint64_t h = fnv1a64(text);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

SweepSpec parse_sweep_spec(const ExperimentConfig& cfg) {
    SweepSpec spec;
    const HeadPlacement base = cfg.effective_placement();
    if (trim(cfg.sweep_placements) == "auto") {
        const int64_t L = cfg.num_layers;
        switch (cfg.variant) {
        case Variant::lower_nsp:
        case Variant::lower_nsp_freeze:
            for (int64_t n = 1; n < L; ++n) {
                HeadPlacement p = base;
                p.mlm_layer = L;
                p.nsp_layer = n;
                spec.placements.push_back(p);
            }
            break;
        case Variant::lower_mask:
            for (int64_t m = 1; m < L; ++m) {
                HeadPlacement p = base;
                p.mlm_layer = m;
                p.nsp_layer = L;
                spec.placements.push_back(p);
            }
            break;
        default:
            spec.placements.push_back(base);
            break;
        }
    } else {
        for (const std::string& item : split_list(cfg.sweep_placements)) {
            const size_t colon = item.find(':');
            if (colon == std::string::npos) {
                throw ConfigError("sweep.placements entry '" + item +
                                  "' must look like mlm:nsp");
            }
            HeadPlacement p = base;
            p.mlm_layer = to_int("sweep.placements", trim(item.substr(0, colon)));
            p.nsp_layer = to_int("sweep.placements", trim(item.substr(colon + 1)));
            spec.placements.push_back(p);
        }
    }
    for (const std::string& s : split_list(cfg.sweep_pt_concats)) {
        spec.pt_concats.push_back(concat_mode_from_string(s));
    }
    for (const std::string& s : split_list(cfg.sweep_ft_concats)) {
        spec.ft_concats.push_back(concat_mode_from_string(s));
    }
    for (const std::string& s : split_list(cfg.sweep_seeds)) {
        spec.seeds.push_back(to_uint("sweep.seeds", s));
    }
    if (spec.placements.empty() || spec.pt_concats.empty() || spec.ft_concats.empty() ||
        spec.seeds.empty()) {
        throw ConfigError("sweep: placements, concat lists, and seeds must be non-empty");
    }
    return spec;
}

} // namespace bertlab
