#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "minimm/data.hpp"
#include "minimm/eval.hpp"
#include "minimm/model.hpp"
#include "minimm/pipeline.hpp"

namespace minimm {

struct ModelArchConfig {
    std::string encoder_preset = "B";
    VisionEncoderConfig encoder; // depth 0 defers to the preset
    std::string lm_preset = "0.5B";
    LmConfig lm; // depth 0 defers to the preset
    int projector_hidden = 0;
    bool ensemble = false;
    std::string encoder2_preset = "B";
    VisionEncoderConfig encoder2;

    VisionEncoderConfig resolved_encoder() const;
    VisionEncoderConfig resolved_encoder2() const;
    LmConfig resolved_lm() const;
};

struct DataConfig {
    std::string path;     // dataset directory; loaded if present
    bool generate = true; // build (and write when path set) if missing
    DatasetManifest manifest;
};

struct EvalSuiteConfig {
    uint64_t seed = 0; // 0 defers to the run seed
    bool vqa = true;
    int vqa_max_new_tokens = 40;
    int vqa_samples = 0; // 0 = whole eval split
    bool linear_probe = true;
    LinearProbeConfig linear;
    bool segmentation = true;
    SegProbeConfig seg;
    int probe_samples = 0;
    std::vector<std::string> alignment_reference_checkpoints;
    int alignment_k = 8;
    int alignment_samples = 512;
    bool attribution = false;
    AttributionConfig attr;
    int attribution_samples = 50;
};

struct RunConfig {
    uint64_t seed = 1;
    std::string out_root = "out";
    std::vector<std::string> stages = {"align", "pretrain", "posttrain"};
    std::string init_checkpoint;
    std::string stage3_bundle;
    ModelArchConfig model;
    DataConfig data;
    StageConfig align, pretrain, posttrain, stage3;
    bool run_eval = true;
    EvalSuiteConfig eval;

    RunConfig();
};

// Strict parsing: any unknown field is an error naming the offending path.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Every applied default appears in the resolved form, so a run is
// reconstructible from its log alone.
nlohmann::json resolved_json(const RunConfig& cfg);

// Hash over the resolved config with the seed field cleared; artifact paths
// are derived from (hash, seed).
std::string config_hash(const RunConfig& cfg);

void check_known_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                      const std::string& path);

} // namespace minimm
