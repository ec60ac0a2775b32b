#include "bertlab/checkpoint.hpp"

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace bertlab {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_doubles(std::ofstream& out, const double* data, size_t count) {
    // Little-endian payload; this writes raw IEEE-754 doubles on LE hosts.
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(double)));
}

std::vector<double> read_doubles(std::ifstream& in, uint64_t offset, uint64_t count,
                                 const std::string& what) {
    std::vector<double> out(count);
    in.seekg(static_cast<std::streamoff>(offset * sizeof(double)));
    in.read(reinterpret_cast<char*>(out.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw IoError("checkpoint: truncated payload while reading " + what);
    return out;
}

uint64_t doubles_checksum(const std::vector<double>& d) {
    return fnv1a64(d.data(), d.size() * sizeof(double));
}

ojson encoder_to_json(const EncoderConfig& c) {
    ojson j;
    j["num_layers"] = c.num_layers;
    j["num_heads"] = c.num_heads;
    j["hidden_size"] = c.hidden_size;
    j["ff_size"] = c.ff_size;
    j["max_position"] = c.max_position;
    j["vocab_size"] = c.vocab_size;
    j["type_vocab"] = c.type_vocab;
    j["dropout_p"] = c.dropout_p;
    j["init_stddev"] = c.init_stddev;
    j["layer_norm_eps"] = c.layer_norm_eps;
    return j;
}

EncoderConfig encoder_from_json(const ojson& j) {
    EncoderConfig c;
    c.num_layers = j.at("num_layers").get<int64_t>();
    c.num_heads = j.at("num_heads").get<int64_t>();
    c.hidden_size = j.at("hidden_size").get<int64_t>();
    c.ff_size = j.at("ff_size").get<int64_t>();
    c.max_position = j.at("max_position").get<int64_t>();
    c.vocab_size = j.at("vocab_size").get<int64_t>();
    c.type_vocab = j.at("type_vocab").get<int64_t>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.init_stddev = j.at("init_stddev").get<double>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    return c;
}

} // namespace

const std::vector<double>& LoadedCheckpoint::param(const std::string& name) const {
    for (const auto& [n, v] : params) {
        if (n == name) return v;
    }
    throw IoError("checkpoint: parameter '" + name + "' not present");
}

void save_checkpoint(const std::string& dir, const CheckpointMeta& meta,
                     const std::vector<NamedParam>& params, const AdamAmsgrad* optimizer) {
    fs::create_directories(dir);

    ojson manifest;
    manifest["format_version"] = meta.format_version;
    manifest["kind"] = meta.kind;
    manifest["step"] = meta.step;
    manifest["seed"] = meta.seed;
    manifest["config_hash"] = meta.config_hash;
    manifest["vocab_checksum"] = meta.vocab_checksum;
    manifest["encoder"] = encoder_to_json(meta.encoder);
    manifest["placement"] = {{"mlm_layer", meta.placement.mlm_layer},
                             {"nsp_layer", meta.placement.nsp_layer},
                             {"nsp_enabled", meta.placement.nsp_enabled},
                             {"bigram_enabled", meta.placement.bigram_enabled}};
    manifest["pt_concat"] = to_string(meta.pt_concat);
    manifest["ft_concat"] = to_string(meta.ft_concat);
    manifest["task"] = to_string(meta.task);
    manifest["loss_weights"] = {{"mlm", meta.mlm_weight},
                                {"nsp", meta.nsp_weight},
                                {"bigram", meta.bigram_weight}};
    manifest["config_text"] = meta.config_text;

    // Parameter payload.
    {
        std::ofstream bin(fs::path(dir) / "params.bin", std::ios::binary);
        if (!bin) throw IoError("checkpoint: cannot write " + dir + "/params.bin");
        ojson index = ojson::array();
        uint64_t offset = 0;
        for (const auto& [name, t] : params) {
            ojson e;
            e["name"] = name;
            e["shape"] = t.shape();
            e["offset"] = offset;
            e["count"] = t.numel();
            e["checksum"] = hex64(checksum(t));
            index.push_back(std::move(e));
            write_doubles(bin, t.data().data(), t.data().size());
            offset += static_cast<uint64_t>(t.numel());
        }
        manifest["params"] = std::move(index);
    }

    if (optimizer) {
        std::ofstream bin(fs::path(dir) / "optim.bin", std::ios::binary);
        if (!bin) throw IoError("checkpoint: cannot write " + dir + "/optim.bin");
        ojson oj;
        oj["step_count"] = optimizer->step_count();
        oj["frozen"] = optimizer->frozen();
        ojson index = ojson::array();
        uint64_t offset = 0;
        for (const auto& slot : optimizer->slots()) {
            const std::array<const std::vector<double>*, 3> arrays = {&slot.m, &slot.v,
                                                                      &slot.vmax};
            static const char* kMomentNames[3] = {"m", "v", "vmax"};
            for (int a = 0; a < 3; ++a) {
                ojson e;
                e["name"] = std::string(kMomentNames[a]) + "." + slot.name;
                e["offset"] = offset;
                e["count"] = arrays[static_cast<size_t>(a)]->size();
                e["checksum"] = hex64(doubles_checksum(*arrays[static_cast<size_t>(a)]));
                index.push_back(std::move(e));
                write_doubles(bin, arrays[static_cast<size_t>(a)]->data(),
                              arrays[static_cast<size_t>(a)]->size());
                offset += static_cast<uint64_t>(arrays[static_cast<size_t>(a)]->size());
            }
        }
        oj["arrays"] = std::move(index);
        manifest["optimizer"] = std::move(oj);
    }

    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!mf) throw IoError("checkpoint: cannot write " + dir + "/manifest.json");
    mf << manifest.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    const fs::path base(dir);
    std::ifstream mf(base / "manifest.json", std::ios::binary);
    if (!mf) throw IoError("checkpoint: cannot open " + dir + "/manifest.json");
    ojson manifest;
    try {
        manifest = ojson::parse(mf);
    } catch (const std::exception& e) {
        throw IoError("checkpoint: bad manifest JSON in " + dir + ": " + e.what());
    }

    LoadedCheckpoint ckpt;
    CheckpointMeta& meta = ckpt.meta;
    meta.format_version = manifest.at("format_version").get<int64_t>();
    if (meta.format_version != kCheckpointFormatVersion) {
        throw IoError("checkpoint: format version " + std::to_string(meta.format_version) +
                      " not supported (expected " + std::to_string(kCheckpointFormatVersion) +
                      ")");
    }
    meta.kind = manifest.at("kind").get<std::string>();
    meta.step = manifest.at("step").get<int64_t>();
    meta.seed = manifest.at("seed").get<uint64_t>();
    meta.config_hash = manifest.at("config_hash").get<std::string>();
    meta.vocab_checksum = manifest.at("vocab_checksum").get<uint64_t>();
    meta.encoder = encoder_from_json(manifest.at("encoder"));
    const auto& pj = manifest.at("placement");
    meta.placement.mlm_layer = pj.at("mlm_layer").get<int64_t>();
    meta.placement.nsp_layer = pj.at("nsp_layer").get<int64_t>();
    meta.placement.nsp_enabled = pj.at("nsp_enabled").get<bool>();
    meta.placement.bigram_enabled = pj.at("bigram_enabled").get<bool>();
    meta.pt_concat = concat_mode_from_string(manifest.at("pt_concat").get<std::string>());
    meta.ft_concat = concat_mode_from_string(manifest.at("ft_concat").get<std::string>());
    meta.task = ft_task_from_string(manifest.at("task").get<std::string>());
    const auto& lw = manifest.at("loss_weights");
    meta.mlm_weight = lw.at("mlm").get<double>();
    meta.nsp_weight = lw.at("nsp").get<double>();
    meta.bigram_weight = lw.at("bigram").get<double>();
    meta.config_text = manifest.at("config_text").get<std::string>();

    std::ifstream pbin(base / "params.bin", std::ios::binary);
    if (!pbin) throw IoError("checkpoint: cannot open " + dir + "/params.bin");
    for (const auto& e : manifest.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        auto data = read_doubles(pbin, e.at("offset").get<uint64_t>(),
                                 e.at("count").get<uint64_t>(), name);
        if (hex64(doubles_checksum(data)) != e.at("checksum").get<std::string>()) {
            throw IoError("checkpoint: checksum mismatch in parameter '" + name + "'");
        }
        ckpt.params.emplace_back(name, std::move(data));
    }

    if (manifest.contains("optimizer")) {
        const auto& oj = manifest.at("optimizer");
        LoadedCheckpoint::Optimizer opt;
        opt.step_count = oj.at("step_count").get<int64_t>();
        for (const auto& f : oj.at("frozen")) opt.frozen.insert(f.get<std::string>());
        std::ifstream obin(base / "optim.bin", std::ios::binary);
        if (!obin) throw IoError("checkpoint: cannot open " + dir + "/optim.bin");
        for (const auto& e : oj.at("arrays")) {
            const std::string full = e.at("name").get<std::string>();
            auto data = read_doubles(obin, e.at("offset").get<uint64_t>(),
                                     e.at("count").get<uint64_t>(), full);
            if (hex64(doubles_checksum(data)) != e.at("checksum").get<std::string>()) {
                throw IoError("checkpoint: checksum mismatch in optimizer array '" + full + "'");
            }
            const size_t dot = full.find('.');
            const std::string moment = full.substr(0, dot);
            const std::string pname = full.substr(dot + 1);
            const int slot = moment == "m" ? 0 : moment == "v" ? 1 : 2;
            opt.moments[pname][static_cast<size_t>(slot)] = std::move(data);
        }
        ckpt.optimizer = std::move(opt);
    }
    return ckpt;
}

void restore_parameters(const LoadedCheckpoint& ckpt, const std::vector<NamedParam>& targets) {
    if (targets.size() != ckpt.params.size()) {
        throw IoError("checkpoint: parameter count mismatch: model has " +
                      std::to_string(targets.size()) + ", checkpoint has " +
                      std::to_string(ckpt.params.size()));
    }
    for (size_t i = 0; i < targets.size(); ++i) {
        const auto& [name, tensor] = targets[i];
        const auto& [saved_name, data] = ckpt.params[i];
        if (name != saved_name) {
            throw IoError("checkpoint: parameter order mismatch at index " + std::to_string(i) +
                          ": model '" + name + "' vs checkpoint '" + saved_name + "'");
        }
        if (static_cast<int64_t>(data.size()) != tensor.numel()) {
            throw IoError("checkpoint: size mismatch for '" + name + "'");
        }
        Tensor handle = tensor; // shared node; documented in-place write
        std::memcpy(handle.mutable_data().data(), data.data(), data.size() * sizeof(double));
    }
}

void restore_optimizer(const LoadedCheckpoint& ckpt, AdamAmsgrad& opt) {
    if (!ckpt.optimizer) throw IoError("checkpoint: no optimizer state present");
    const auto& saved = *ckpt.optimizer;
    opt.set_step_count(saved.step_count);
    opt.freeze(saved.frozen);
    for (auto& slot : opt.slots()) {
        auto it = saved.moments.find(slot.name);
        if (it == saved.moments.end()) {
            throw IoError("checkpoint: optimizer state missing for '" + slot.name + "'");
        }
        const auto& [m, v, vmax] = it->second;
        if (m.size() != slot.m.size()) {
            throw IoError("checkpoint: optimizer state size mismatch for '" + slot.name + "'");
        }
        slot.m = m;
        slot.v = v;
        slot.vmax = vmax;
    }
}

PretrainModel rebuild_pretrain_model(const LoadedCheckpoint& ckpt) {
    if (ckpt.meta.kind != "pretrain") {
        throw IoError("checkpoint: expected a pretrain checkpoint, found kind '" +
                      ckpt.meta.kind + "'");
    }
    PretrainModel model = PretrainModel::init(ckpt.meta.encoder, ckpt.meta.placement,
                                              ckpt.meta.pt_concat, ckpt.meta.seed);
    model.mlm_weight = ckpt.meta.mlm_weight;
    model.nsp_weight = ckpt.meta.nsp_weight;
    model.bigram_weight = ckpt.meta.bigram_weight;
    restore_parameters(ckpt, model.named_parameters());
    return model;
}

FinetuneModel rebuild_finetune_model(const LoadedCheckpoint& ckpt) {
    if (ckpt.meta.kind != "finetune") {
        throw IoError("checkpoint: expected a finetune checkpoint, found kind '" +
                      ckpt.meta.kind + "'");
    }
    PretrainModel base = PretrainModel::init(ckpt.meta.encoder, ckpt.meta.placement,
                                             ckpt.meta.pt_concat, ckpt.meta.seed);
    FinetuneModel model =
        FinetuneModel::from_pretrained(base, ckpt.meta.task, ckpt.meta.ft_concat, ckpt.meta.seed);
    restore_parameters(ckpt, model.named_parameters());
    return model;
}

} // namespace bertlab
