#pragma once

#include <ostream>
#include <string>

#include "minimm/config.hpp"
#include "minimm/report.hpp"

namespace minimm {

struct RunOutcome {
    std::string run_dir;
    EvalReport report; // empty rows when run_eval is false
    std::string final_checkpoint;
};

// out_root/runs/<config-hash>-s<seed>; a numeric suffix is appended when the
// directory already exists so reruns never clobber earlier artifacts.
std::string allocate_run_dir(const RunConfig& cfg);

// Loads or generates the configured dataset.
Dataset prepare_dataset(const DataConfig& data);

// Executes the configured stage chain (and evaluation), writing checkpoints,
// logs, sample-id traces, report.json and metrics.csv under the run dir.
// Partial outputs are quarantined by renaming the dir to *.failed.
RunOutcome run_train(const RunConfig& cfg, std::ostream* log = nullptr);

// stage3 flow: load a pivot bundle, build the downstream model, train, eval.
RunOutcome run_stage3(const RunConfig& cfg, std::ostream* log = nullptr);

// Evaluation of a model against a dataset per the eval section.
EvalReport evaluate_model(const RunConfig& cfg, MultimodalModel& model, const Dataset& data,
                          const std::string& out_dir, std::ostream* log = nullptr);

} // namespace minimm
