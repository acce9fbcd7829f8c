#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"

namespace ngc::report {

struct Row {
    int iteration = 0;
    std::string node;
    std::string edge;
    std::string metric;
    double value = 0.0;
};

// Canonical report CSV: header "iteration,node,edge,metric,value"; values
// are written with full precision so reruns can be compared bit for bit.
void write_csv(const std::filesystem::path& file, const std::vector<Row>& rows);
std::vector<Row> read_csv(const std::filesystem::path& file);

// Summary mirroring the familiar results-table layout: per (node, metric)
// rows, per-iteration ensemble/edge values.
nlohmann::ordered_json build_summary(const std::vector<Row>& eval_rows);
void write_summary(const std::filesystem::path& file, const nlohmann::ordered_json& summary);
nlohmann::ordered_json read_summary(const std::filesystem::path& file);

// Aligned-text rendering of a summary; every float printed with 6
// significant digits. The JSON and text forms carry identical values.
std::string render_text(const nlohmann::ordered_json& summary);

// Loads reports/summary.json from a run directory and renders it.
std::string render_run(const std::filesystem::path& run_dir, bool as_json);

}  // namespace ngc::report
