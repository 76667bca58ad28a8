#pragma once

#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "minimm/report.hpp"

namespace minimm {

struct SweepAxes {
    std::vector<std::string> method = {"sft", "dpo"};
    std::vector<std::string> encoder_preset = {"B"};
    std::vector<std::string> lm_preset = {"0.5B"};
    std::vector<int> posttrain_samples = {2000};
    std::vector<double> shift_ratio = {0.0};
};

struct SweepConfig {
    nlohmann::json base; // run-config json shared by every cell
    SweepAxes axes;
    int seeds = 1;
    uint64_t seed_base = 1;
    int workers = 1;
    std::string out_root = "sweep_out";
};

SweepConfig parse_sweep_config(const nlohmann::json& j);
SweepConfig load_sweep_config(const std::string& path);

struct CellResult {
    std::string method, encoder_preset, lm_preset;
    int posttrain_samples = 0;
    double shift_ratio = 0.0;
    uint64_t seed = 0;
    bool ok = false;
    std::string run_dir;
    EvalReport report;
};

// Shares one Stage-1 run per (encoder, lm) pair, then posttrains and
// evaluates every cell; emits aggregate.csv (raw rows plus mean/sd over
// seeds) and SVG trend plots under out_root.
std::vector<CellResult> run_sweep(const SweepConfig& cfg, std::ostream* log = nullptr);

// Aggregate CSV text for a cell set; deterministic and independent of the
// execution order.
std::string aggregate_csv(const std::vector<CellResult>& cells);

// Simple line plot: one series per method, x = axis values.
std::string svg_line_plot(const std::string& title, const std::vector<double>& xs,
                          const std::vector<std::pair<std::string, std::vector<double>>>& series);

} // namespace minimm
