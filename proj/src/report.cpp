#include "minimm/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace minimm {

void EvalReport::add(const std::string& name, const std::string& domain, double value,
                     uint64_t s) {
    rows.push_back({name, domain, value, s});
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

void sort_rows(std::vector<MetricRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
        return std::tie(a.name, a.domain, a.seed) < std::tie(b.name, b.domain, b.seed);
    });
}

} // namespace

void write_report(const EvalReport& r, const std::string& dir) {
    fs::create_directories(dir);
    auto rows = r.rows;
    sort_rows(rows);

    json jrows = json::array();
    for (const auto& row : rows)
        jrows.push_back(json{{"name", row.name},
                             {"domain", row.domain},
                             {"value", row.value},
                             {"seed", row.seed}});
    json j{{"config_hash", r.config_hash},
           {"seed", r.seed},
           {"metadata", r.metadata},
           {"metrics", jrows}};
    {
        std::ofstream out(fs::path(dir) / "report.json");
        out << j.dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(dir) / "metrics.csv");
        out << "name,domain,value,seed,config_hash\n";
        for (const auto& row : rows)
            out << row.name << "," << row.domain << "," << format_double(row.value) << ","
                << row.seed << "," << r.config_hash << "\n";
    }
}

EvalReport read_report(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("report: cannot open " + json_path);
    json j = json::parse(in);
    EvalReport r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    for (const auto& row : j.at("metrics"))
        r.rows.push_back({row.at("name").get<std::string>(),
                          row.at("domain").get<std::string>(),
                          row.at("value").get<double>(), row.at("seed").get<uint64_t>()});
    return r;
}

std::vector<DiffRow> report_diff(const EvalReport& a, const EvalReport& b) {
    using Key = std::tuple<std::string, std::string, uint64_t>;
    std::map<Key, double> bvals;
    std::map<std::pair<std::string, std::string>, int> a_metrics, b_metrics;
    for (const auto& row : b.rows) {
        bvals[{row.name, row.domain, row.seed}] = row.value;
        b_metrics[{row.name, row.domain}]++;
    }
    for (const auto& row : a.rows) a_metrics[{row.name, row.domain}]++;
    if (a_metrics.size() != b_metrics.size())
        throw std::invalid_argument("report_diff: metric schemas differ");
    for (const auto& [k, n] : a_metrics)
        if (!b_metrics.count(k)) throw std::invalid_argument("report_diff: metric schemas differ");

    std::map<std::pair<std::string, std::string>, std::pair<double, int>> acc;
    for (const auto& row : a.rows) {
        auto it = bvals.find({row.name, row.domain, row.seed});
        if (it == bvals.end()) continue; // unpaired seed
        auto& [sum, n] = acc[{row.name, row.domain}];
        sum += row.value - it->second;
        n += 1;
    }
    std::vector<DiffRow> out;
    for (const auto& [k, sn] : acc)
        out.push_back({k.first, k.second, sn.second ? sn.first / sn.second : 0.0, sn.second});
    return out;
}

std::string diff_table(const std::vector<DiffRow>& rows) {
    std::string out = "metric,domain,delta,pairs\n";
    for (const auto& r : rows)
        out += r.name + "," + r.domain + "," + format_double(r.delta) + "," +
               std::to_string(r.pairs) + "\n";
    return out;
}

} // namespace minimm
