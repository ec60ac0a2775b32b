#include "bertlab/report.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "bertlab/error.hpp"

namespace bertlab {

using ojson = nlohmann::ordered_json;

void append_metric_rows_jsonl(const std::string& path, std::span<const MetricRow> rows) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to report: " + path);
    for (const MetricRow& r : rows) {
        ojson j;
        j["variant"] = r.variant;
        j["placement"] = r.placement;
        j["pt_concat"] = r.pt_concat;
        j["ft_concat"] = r.ft_concat;
        j["task"] = r.task;
        j["metric"] = r.metric;
        j["value"] = r.value;
        j["seed"] = r.seed;
        j["config_hash"] = r.config_hash;
        j["step"] = r.step;
        out << j.dump() << '\n';
    }
}

void append_metric_rows_csv(const std::string& path, std::span<const MetricRow> rows) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to report: " + path);
    if (fresh) {
        out << "variant,placement,pt_concat,ft_concat,task,metric,value,seed,config_hash,step\n";
    }
    for (const MetricRow& r : rows) {
        out << r.variant << ',' << r.placement << ',' << r.pt_concat << ',' << r.ft_concat << ','
            << r.task << ',' << r.metric << ',' << r.value << ',' << r.seed << ','
            << r.config_hash << ',' << r.step << '\n';
    }
}

} // namespace bertlab
