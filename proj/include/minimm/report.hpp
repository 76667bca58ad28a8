#pragma once

#include <map>
#include <string>
#include <vector>

namespace minimm {

struct MetricRow {
    std::string name;
    std::string domain; // "" for scalar metrics
    double value = 0.0;
    uint64_t seed = 0;
};

struct EvalReport {
    std::string config_hash;
    uint64_t seed = 0;
    std::map<std::string, std::string> metadata;
    std::vector<MetricRow> rows;

    void add(const std::string& name, const std::string& domain, double value, uint64_t seed);
};

// report.json plus metrics.csv (name,domain,value,seed,config_hash), rows in
// canonical (name, domain, seed) order and %.17g floats, so reruns of the
// same configuration are byte-identical.
void write_report(const EvalReport& r, const std::string& dir);
EvalReport read_report(const std::string& json_path);

struct DiffRow {
    std::string name;
    std::string domain;
    double delta = 0.0; // mean over seed-paired values of (a - b)
    int pairs = 0;
};

// Seed-paired signed deltas; reports must share a metric schema.
std::vector<DiffRow> report_diff(const EvalReport& a, const EvalReport& b);
std::string diff_table(const std::vector<DiffRow>& rows);

std::string format_double(double v); // shortest round-trip-safe decimal

} // namespace minimm
