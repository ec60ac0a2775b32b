#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace bertlab {

/// One (model variant, placement, concat, task, metric) result. Rows append
/// to JSONL and CSV so sweeps can be re-run incrementally.
struct MetricRow {
    std::string variant;
    std::string placement; // "mlm:nsp"
    std::string pt_concat;
    std::string ft_concat;
    std::string task;
    std::string metric;
    double value = 0.0;
    uint64_t seed = 0;
    std::string config_hash;
    int64_t step = -1;
};

void append_metric_rows_jsonl(const std::string& path, std::span<const MetricRow> rows);
void append_metric_rows_csv(const std::string& path, std::span<const MetricRow> rows);

} // namespace bertlab
