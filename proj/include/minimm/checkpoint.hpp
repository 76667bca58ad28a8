#pragma once

#include <optional>
#include <string>
#include <vector>

#include "minimm/adam.hpp"
#include "minimm/model.hpp"

namespace minimm {

struct StageRecord {
    std::string stage;
    std::string method; // sft|dpo for posttrain, empty otherwise
    uint64_t seed = 0;
    int steps = 0;
    std::string config_hash;
};

// Architecture needed to rebuild a model shell before loading parameters.
struct ModelSpec {
    VisionEncoderConfig enc;
    std::optional<VisionEncoderConfig> enc2;
    std::vector<int> projector_dims;
    std::vector<bool> projector_frozen;
    LmConfig lm;
    TrainableFlags flags;
};

ModelSpec spec_of(const MultimodalModel& m);
MultimodalModel model_from_spec(const ModelSpec& spec, uint64_t init_seed = 0);

// Checkpoint directory: manifest.json plus params.bin (little-endian doubles,
// offsets in the manifest, whole-file checksum). Optimizer moments ride along
// so interrupted runs resume bit-exactly.
void save_checkpoint(const std::string& dir, MultimodalModel& model,
                     const std::vector<StageRecord>& provenance, uint64_t seed,
                     int64_t step, Adam* optimizer = nullptr);

struct LoadedCheckpoint {
    MultimodalModel model;
    std::vector<StageRecord> provenance;
    uint64_t seed = 0;
    int64_t step = 0;
    bool has_optimizer = false;
    int64_t optimizer_steps = 0;
    // moment buffers in trainable-parameter order
    std::vector<std::vector<double>> opt_m, opt_v;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

// Restores saved moments into a freshly built optimizer; shapes must match.
void restore_optimizer(Adam& opt, const LoadedCheckpoint& ck);

// Frozen encoder (+ leading projector layers) detached from a trained model.
struct PivotBundle {
    VisionEncoderConfig enc_cfg;
    std::optional<VisionEncoderConfig> enc2_cfg;
    std::vector<std::pair<std::string, std::vector<double>>> encoder_params;
    int reuse = 0;                       // number of projector layers carried along
    std::vector<int> reused_dims;        // {in, out0, out1...} for the reused prefix
    std::vector<std::pair<std::string, std::vector<double>>> projector_params;
    std::vector<StageRecord> provenance;
};

PivotBundle pivot_extract(MultimodalModel& trained, int reuse,
                          const std::vector<StageRecord>& provenance);
void save_pivot_bundle(const std::string& dir, const PivotBundle& b);
PivotBundle load_pivot_bundle(const std::string& dir);

uint64_t hash_params(MultimodalModel& m);

} // namespace minimm
