#pragma once

#include <functional>
#include <optional>

#include "minimm/checkpoint.hpp"
#include "minimm/data.hpp"
#include "minimm/objectives.hpp"

namespace minimm {

struct StageConfig {
    std::string stage = "pretrain"; // align | pretrain | posttrain | stage3
    std::string method = "sft";     // posttrain only: sft | dpo
    double lr = 3e-4;
    int batch_size = 32;
    int steps = 300;
    uint64_t seed = 0; // 0 inherits the run seed at config resolution
    double beta = 0.1;          // dpo temperature
    double warmup_frac = 0.03;  // cosine schedule warmup share
    int checkpoint_every = 0;   // 0 = final only
    int log_every = 0;
    int max_samples = 0;        // 0 = whole split; otherwise first n sample ids
    // stage3 only
    int pivot_projector_reuse = 1;
    int added_projector_layers = 1;
    bool full_train = false;
};

// Linear warmup from base/w, then cosine decay; never exactly zero at step 0
// so fixed-batch losses decrease from the first step.
double cosine_lr(double base, int step, int total_steps, double warmup_frac);

// Stateless batch selection: a pure function of (seed, step), identical for
// every method consuming the same split. Sampling is with replacement.
std::vector<int> batch_indices(uint64_t seed, int step, int dataset_size, int batch_size);

struct TrainResult {
    std::vector<double> losses;
    std::vector<std::vector<int>> step_sample_ids; // dataset-global ids per step
    int64_t final_step = 0;
};

using StepHook = std::function<void(int64_t step_done, Adam& opt)>;

// Shared loop behind every stage: deterministic batches, cosine schedule,
// Adam over the model's trainable parameters.
TrainResult train_stage(MultimodalModel& model, const std::vector<const Sample*>& samples,
                        const StageConfig& cfg, const MultimodalModel* reference,
                        Adam* resume_opt = nullptr, int64_t start_step = 0,
                        const StepHook& hook = {});

// Projector-only alignment on caption samples.
TrainResult stage1_align(MultimodalModel& model, const Dataset& data, const StageConfig& cfg,
                         Adam* resume_opt = nullptr, int64_t start_step = 0,
                         const StepHook& hook = {});

// Full-parameter instruction training on chosen responses.
TrainResult stage1_pretrain(MultimodalModel& model, const Dataset& data, const StageConfig& cfg,
                            Adam* resume_opt = nullptr, int64_t start_step = 0,
                            const StepHook& hook = {});

// SFT or DPO over the preference split; for DPO the reference is a snapshot
// of the model at entry (pass null to snapshot internally).
TrainResult stage2_posttrain(MultimodalModel& model, const Dataset& data, const StageConfig& cfg,
                             const MultimodalModel* reference = nullptr,
                             Adam* resume_opt = nullptr, int64_t start_step = 0,
                             const StepHook& hook = {});

// Assembles the downstream model around a frozen extracted encoder: reused
// frozen projector layers, fresh bridging layers, fresh LM.
MultimodalModel make_stage3_model(const PivotBundle& bundle, const LmConfig& fresh_lm,
                                  int added_projector_layers, uint64_t seed,
                                  bool full_train);

TrainResult stage3_finetune(MultimodalModel& model, const Dataset& data, const StageConfig& cfg,
                            Adam* resume_opt = nullptr, int64_t start_step = 0,
                            const StepHook& hook = {});

std::vector<const Sample*> split_samples(const Dataset& data, const std::string& split,
                                         int max_samples = 0);

} // namespace minimm
