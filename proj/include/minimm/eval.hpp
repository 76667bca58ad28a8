#pragma once

#include <map>
#include <string>
#include <vector>

#include "minimm/data.hpp"
#include "minimm/model.hpp"

namespace minimm {

struct FeatureMatrix {
    int n = 0, d = 0;
    std::vector<double> values; // row-major n x d
    std::string source;         // "encoder" | "projected" | "text" | "raw"
    std::vector<int> sample_ids;

    const double* row(int i) const { return values.data() + size_t(i) * size_t(d); }
};

// Per-image feature = mean over patch tokens of the chosen activation source.
FeatureMatrix extract_features(const MultimodalModel& model,
                               const std::vector<const Sample*>& samples,
                               const std::string& source);

// Mean-pooled text-tower hidden states over token sequences; the reference
// side of the representational alignment score.
FeatureMatrix text_tower_features(const LanguageModel& lm,
                                  const std::vector<std::vector<int>>& token_seqs);

struct LinearProbeConfig {
    double heldout_frac = 0.5;
    std::string mode = "prototype"; // prototype | logistic
    uint64_t seed = 0;
    int iters = 200;   // logistic only
    double lr = 0.1;   // logistic only
    double l2 = 1e-3;  // logistic only
};

double linear_probe(const FeatureMatrix& features, const std::vector<int>& labels,
                    const LinearProbeConfig& cfg);

struct SegProbeConfig {
    int epochs = 5;
    double lr = 1e-3;
    int hidden = 32;
    int batch = 32;
    double heldout_frac = 0.5;
    int seeds = 6;
    uint64_t seed_base = 0;
};

// Two-layer MLP patch classifier on frozen features; mean per-class recall
// over non-background classes, averaged over seeds.
double segmentation_probe_features(const FeatureMatrix& patch_features,
                                   const std::vector<uint8_t>& patch_labels,
                                   const SegProbeConfig& cfg);

// Extracts per-patch encoder features over the probe split and runs the MLP
// probe; the probed model is read-only throughout.
double segmentation_probe(const MultimodalModel& model, const Dataset& data,
                          const SegProbeConfig& cfg);

// Mean over rows of |kNN_a(i) ∩ kNN_b(i)| / k under cosine similarity,
// self excluded, ties broken toward smaller row index.
double mutual_knn_alignment(const FeatureMatrix& a, const FeatureMatrix& b, int k);

struct AttributionConfig {
    int train_steps = 20;    // optimizer steps on the single sample before reading
    int schedule_total = 100;
    double lr = 3e-4;
    double beta = 0.1;
    uint64_t seed = 0;
};

struct AttributionMap {
    int grid = 0;               // patch grid side
    std::vector<double> values; // row-major, in [0,1], max is 1 unless all zero
    int sample_id = 0;
    std::string objective;      // sft | dpo
};

// Trains a clone of the model on the one sample, then reads the norm of the
// loss gradient at the encoder features, per patch, max-normalized.
AttributionMap grad_attribution(const MultimodalModel& model, const Sample& sample,
                                const std::string& objective, const AttributionConfig& cfg);

// Share of attribution mass inside one scene cell (scene grid over patch grid).
double attribution_cell_mass(const AttributionMap& map, int target_cell, int scene_grid);

void write_attribution_pgm(const AttributionMap& map, const std::string& path);
void write_attribution_raw(const AttributionMap& map, const std::string& path);

struct VqaConfig {
    int max_new_tokens = 40;
};

struct VqaResult {
    std::map<std::string, double> domain_accuracy;
    double macro_accuracy = 0.0;
    int overlength = 0; // decodes that hit the budget without <eos>; counted wrong
    int total = 0;
};

VqaResult vqa_eval(const MultimodalModel& model, const std::vector<const Sample*>& samples,
                   const VqaConfig& cfg);

} // namespace minimm
