#include "ngc/report.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ngc::report {

using json = nlohmann::ordered_json;

namespace {

std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

void write_csv(const std::filesystem::path& file, const std::vector<Row>& rows) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << "iteration,node,edge,metric,value\n";
    for (const auto& r : rows)
        out << r.iteration << "," << r.node << "," << r.edge << "," << r.metric << ","
            << fmt_full(r.value) << "\n";
}

std::vector<Row> read_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    std::string line;
    if (!std::getline(in, line) || line != "iteration,node,edge,metric,value")
        throw std::runtime_error("unexpected header in " + file.string());
    std::vector<Row> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        Row r;
        std::string field;
        std::getline(ss, field, ',');
        r.iteration = std::stoi(field);
        std::getline(ss, r.node, ',');
        std::getline(ss, r.edge, ',');
        std::getline(ss, r.metric, ',');
        std::getline(ss, field, ',');
        // stod would reject subnormals as out of range; strtod reads back
        // everything write_csv can produce
        char* end = nullptr;
        r.value = std::strtod(field.c_str(), &end);
        if (end == field.c_str()) throw std::runtime_error("bad value in " + file.string());
        rows.push_back(std::move(r));
    }
    return rows;
}

json build_summary(const std::vector<Row>& eval_rows) {
    std::vector<int> iterations;
    json rows = json::array();
    auto row_for = [&](const std::string& node, const std::string& metric) -> json& {
        for (auto& r : rows)
            if (r["node"] == node && r["metric"] == metric) return r;
        rows.push_back({{"node", node}, {"metric", metric}, {"values", json::object()}});
        return rows.back();
    };
    for (const auto& r : eval_rows) {
        if (std::find(iterations.begin(), iterations.end(), r.iteration) == iterations.end())
            iterations.push_back(r.iteration);
        std::string predictor = r.edge == "ensemble" ? "ngc" : "edge";
        json& row = row_for(r.node, r.metric);
        row["values"][std::to_string(r.iteration)][predictor] = r.value;
    }
    std::sort(iterations.begin(), iterations.end());
    json summary;
    summary["iterations"] = iterations;
    summary["rows"] = std::move(rows);
    return summary;
}

void write_summary(const std::filesystem::path& file, const json& summary) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << summary.dump(1) << "\n";
}

json read_summary(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    return json::parse(in);
}

std::string render_text(const json& summary) {
    std::vector<int> iterations = summary.at("iterations").get<std::vector<int>>();
    std::vector<std::pair<std::string, std::string>> columns;  // (iteration key, predictor)
    std::vector<std::string> headers = {"node", "metric"};
    for (int it : iterations) {
        if (it == 0) {
            columns.push_back({"0", "edge"});
            headers.push_back("iter0 edge");
        } else {
            columns.push_back({std::to_string(it), "ngc"});
            headers.push_back("iter" + std::to_string(it) + " ngc");
            columns.push_back({std::to_string(it), "edge"});
            headers.push_back("iter" + std::to_string(it) + " edge");
        }
    }

    std::vector<std::vector<std::string>> table;
    table.push_back(headers);
    for (const auto& row : summary.at("rows")) {
        std::vector<std::string> cells = {row.at("node").get<std::string>(),
                                          row.at("metric").get<std::string>()};
        const auto& values = row.at("values");
        for (const auto& [it_key, predictor] : columns) {
            if (values.contains(it_key) && values.at(it_key).contains(predictor))
                cells.push_back(fmt6(values.at(it_key).at(predictor).get<double>()));
            else
                cells.push_back("-");
        }
        table.push_back(std::move(cells));
    }

    std::vector<size_t> widths(headers.size(), 0);
    for (const auto& row : table)
        for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());

    std::string out;
    for (const auto& row : table) {
        for (size_t c = 0; c < row.size(); ++c) {
            if (c) out += "  ";
            out += row[c];
            out.append(widths[c] - row[c].size(), ' ');
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += "\n";
    }
    return out;
}

std::string render_run(const std::filesystem::path& run_dir, bool as_json) {
    auto file = run_dir / "reports" / "summary.json";
    if (!std::filesystem::exists(file))
        throw std::invalid_argument("no reports found: " + file.string() +
                                    " is missing (run evaluate first)");
    json summary = read_summary(file);
    return as_json ? summary.dump(1) + "\n" : render_text(summary);
}

}  // namespace ngc::report
