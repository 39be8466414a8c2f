#pragma once

// Long-format result tables (task, subset, metric, value) and the JSON run
// summary. Values are printed with a fixed format so reruns are
// byte-identical; wall time lives in a separate sidecar file.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xfi/errors.hpp"

namespace xfi {

struct ReportRow {
    std::string task;
    std::string subset;
    std::string metric;
    double value = 0.0;
};

struct Report {
    std::vector<ReportRow> rows;
    std::map<std::string, std::string> metadata; // seed, preset, variant, config digest, ...

    void add(std::string task, std::string subset, std::string metric, double value) {
        rows.push_back({std::move(task), std::move(subset), std::move(metric), value});
    }

    void append(const Report& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

    std::optional<double> find(const std::string& task, const std::string& subset, const std::string& metric) const {
        for (const auto& r : rows)
            if (r.task == task && r.subset == subset && r.metric == metric) return r.value;
        return std::nullopt;
    }

    double value(const std::string& task, const std::string& subset, const std::string& metric) const {
        if (auto v = find(task, subset, metric)) return *v;
        throw PreconditionError("report has no row " + task + "/" + subset + "/" + metric);
    }
};

inline std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string report_csv(const Report& report) {
    std::string out = "task,subset,metric,value\n";
    for (const auto& r : report.rows) out += r.task + "," + r.subset + "," + r.metric + "," + format_value(r.value) + "\n";
    return out;
}

inline nlohmann::ordered_json report_summary(const Report& report) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.metadata) meta[k] = v;
    j["metadata"] = meta;
    nlohmann::ordered_json results = nlohmann::ordered_json::object();
    for (const auto& r : report.rows) results[r.task][r.subset][r.metric] = std::stod(format_value(r.value));
    j["results"] = results;
    return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("failed while writing '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes <stem>.csv and <stem>.json.
inline void write_report(const Report& report, const std::string& dir, const std::string& stem) {
    write_text_file(dir + "/" + stem + ".csv", report_csv(report));
    write_text_file(dir + "/" + stem + ".json", report_summary(report).dump(2) + "\n");
}

inline void write_timing_sidecar(const std::string& dir, const std::string& command, double seconds) {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["wall_time_seconds"] = seconds;
    write_text_file(dir + "/timing." + command + ".json", j.dump(2) + "\n");
}

} // namespace xfi
