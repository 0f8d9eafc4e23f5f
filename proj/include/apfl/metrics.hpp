#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "apfl/errors.hpp"
#include "apfl/network.hpp"

namespace apfl {

// One timeline entry of a run. Rows are strictly time-ordered and the
// cumulative byte counters are monotone.
struct MetricsRow {
    double sim_time_s = 0.0;
    std::string event;
    int client_id = -1;
    int cluster_id = -1;
    std::int64_t staleness = -1;   // -1 when not applicable
    double mean_accuracy = 0.0;
    double min_accuracy = 0.0;
    std::uint64_t up_bytes_cum = 0;
    std::uint64_t down_bytes_cum = 0;
    int cluster_count = 0;
};

struct RunSummary {
    std::string protocol;
    std::uint64_t seed = 0;
    double final_mean_accuracy = 0.0;
    double final_min_accuracy = 0.0;
    std::uint64_t q_max = 0;
    double q_avg = 0.0;
    std::uint64_t total_up_bytes = 0;
    std::uint64_t total_down_bytes = 0;
    std::uint64_t up_peak_1s = 0;
    std::uint64_t down_peak_1s = 0;
    double time_to_target_s = -1.0;
    double end_time_s = 0.0;
    std::uint64_t accepted_pushes = 0;
    std::uint64_t ledger_entries = 0;
    int cluster_count = 0;
    std::map<int, double> client_accuracy;
    std::map<int, int> client_cluster;
};

struct RunTrace {
    std::vector<MetricsRow> rows;
    std::vector<TransferRecord> transfers;
    RunSummary summary;
};

// Locale-independent float formatting, 9 significant digits. Writing a parsed
// value back yields the same text (fixed point of emit-parse).
inline std::string fmt_g9(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline const char* metrics_header() {
    return "sim_time_s,event,client_id,cluster_id,staleness,mean_accuracy,min_accuracy,"
           "up_bytes_cum,down_bytes_cum,cluster_count";
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out = metrics_header();
    out += '\n';
    for (const MetricsRow& r : rows) {
        out += fmt_g9(r.sim_time_s);
        out += ',';
        out += r.event;
        out += ',';
        out += std::to_string(r.client_id);
        out += ',';
        out += std::to_string(r.cluster_id);
        out += ',';
        out += std::to_string(r.staleness);
        out += ',';
        out += fmt_g9(r.mean_accuracy);
        out += ',';
        out += fmt_g9(r.min_accuracy);
        out += ',';
        out += std::to_string(r.up_bytes_cum);
        out += ',';
        out += std::to_string(r.down_bytes_cum);
        out += ',';
        out += std::to_string(r.cluster_count);
        out += '\n';
    }
    return out;
}

inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("metrics csv: empty");
    if (line != metrics_header()) throw ConfigError("metrics csv: unexpected header");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                fields.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (fields.size() != 10) throw ConfigError("metrics csv: malformed row");
        MetricsRow r;
        r.sim_time_s = std::stod(fields[0]);
        r.event = fields[1];
        r.client_id = std::stoi(fields[2]);
        r.cluster_id = std::stoi(fields[3]);
        r.staleness = std::stoll(fields[4]);
        r.mean_accuracy = std::stod(fields[5]);
        r.min_accuracy = std::stod(fields[6]);
        r.up_bytes_cum = std::stoull(fields[7]);
        r.down_bytes_cum = std::stoull(fields[8]);
        r.cluster_count = std::stoi(fields[9]);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::string summary_csv(const RunSummary& s) {
    std::string out = "key,value\n";
    auto kv = [&out](const std::string& k, const std::string& v) {
        out += k;
        out += ',';
        out += v;
        out += '\n';
    };
    kv("protocol", s.protocol);
    kv("seed", std::to_string(s.seed));
    kv("final_mean_accuracy", fmt_g9(s.final_mean_accuracy));
    kv("final_min_accuracy", fmt_g9(s.final_min_accuracy));
    kv("q_max", std::to_string(s.q_max));
    kv("q_avg", fmt_g9(s.q_avg));
    kv("total_up_bytes", std::to_string(s.total_up_bytes));
    kv("total_down_bytes", std::to_string(s.total_down_bytes));
    kv("up_peak_1s", std::to_string(s.up_peak_1s));
    kv("down_peak_1s", std::to_string(s.down_peak_1s));
    kv("time_to_target_s", fmt_g9(s.time_to_target_s));
    kv("end_time_s", fmt_g9(s.end_time_s));
    kv("accepted_pushes", std::to_string(s.accepted_pushes));
    kv("ledger_entries", std::to_string(s.ledger_entries));
    kv("cluster_count", std::to_string(s.cluster_count));
    for (const auto& [id, acc] : s.client_accuracy) kv("client_accuracy." + std::to_string(id), fmt_g9(acc));
    for (const auto& [id, cid] : s.client_cluster) kv("client_cluster." + std::to_string(id), std::to_string(cid));
    return out;
}

inline RunSummary parse_summary_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "key,value") throw ConfigError("summary csv: bad header");
    std::map<std::string, std::string> kv;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ConfigError("summary csv: malformed row");
        kv[line.substr(0, comma)] = line.substr(comma + 1);
    }
    auto need = [&kv](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("summary csv: missing column '" + key + "'");
        return it->second;
    };
    RunSummary s;
    s.protocol = need("protocol");
    s.seed = std::stoull(need("seed"));
    s.final_mean_accuracy = std::stod(need("final_mean_accuracy"));
    s.final_min_accuracy = std::stod(need("final_min_accuracy"));
    s.q_max = std::stoull(need("q_max"));
    s.q_avg = std::stod(need("q_avg"));
    s.total_up_bytes = std::stoull(need("total_up_bytes"));
    s.total_down_bytes = std::stoull(need("total_down_bytes"));
    s.up_peak_1s = std::stoull(need("up_peak_1s"));
    s.down_peak_1s = std::stoull(need("down_peak_1s"));
    s.time_to_target_s = std::stod(need("time_to_target_s"));
    s.end_time_s = std::stod(need("end_time_s"));
    s.accepted_pushes = std::stoull(need("accepted_pushes"));
    s.ledger_entries = std::stoull(need("ledger_entries"));
    s.cluster_count = std::stoi(need("cluster_count"));
    for (const auto& [key, value] : kv) {
        if (key.rfind("client_accuracy.", 0) == 0)
            s.client_accuracy[std::stoi(key.substr(16))] = std::stod(value);
        else if (key.rfind("client_cluster.", 0) == 0)
            s.client_cluster[std::stoi(key.substr(15))] = std::stoi(value);
    }
    return s;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << content;
    if (!out) throw ConfigError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Side-by-side table of run summaries. Time reduction is reported against the
// sync-fedavg row when present, else sync-clustered.
inline std::string render_comparison(const std::vector<RunSummary>& summaries) {
    if (summaries.empty()) throw ConfigError("compare: no summaries");
    double sync_time = -1.0;
    for (const RunSummary& s : summaries)
        if (s.protocol == "sync-fedavg" && s.time_to_target_s > 0) sync_time = s.time_to_target_s;
    if (sync_time < 0)
        for (const RunSummary& s : summaries)
            if (s.protocol == "sync-clustered" && s.time_to_target_s > 0) sync_time = s.time_to_target_s;

    std::ostringstream out;
    out << "protocol,time_to_target_s,final_mean_accuracy,final_min_accuracy,total_up_bytes,"
           "total_down_bytes,q_max,q_avg,up_peak_1s,down_peak_1s,time_reduction_vs_sync_pct\n";
    for (const RunSummary& s : summaries) {
        out << s.protocol << ',' << fmt_g9(s.time_to_target_s) << ',' << fmt_g9(s.final_mean_accuracy)
            << ',' << fmt_g9(s.final_min_accuracy) << ',' << s.total_up_bytes << ','
            << s.total_down_bytes << ',' << s.q_max << ',' << fmt_g9(s.q_avg) << ',' << s.up_peak_1s
            << ',' << s.down_peak_1s << ',';
        if (sync_time > 0 && s.time_to_target_s > 0)
            out << fmt_g9((1.0 - s.time_to_target_s / sync_time) * 100.0);
        else
            out << "n/a";
        out << '\n';
    }
    return out.str();
}

}  // namespace apfl
