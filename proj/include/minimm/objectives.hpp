#pragma once

#include <span>

#include "minimm/data.hpp"
#include "minimm/model.hpp"

namespace minimm {

struct DpoConfig {
    double beta = 0.1;
};

// Model-facing views of a sample: query gets <bos> prepended, responses get
// <eos> appended. Both losses consume exactly these views.
std::vector<int> model_query(const Sample& s);
std::vector<int> model_response(const std::vector<int>& answer_tokens);

// Mean over the batch of the per-token-normalized negative log-likelihood of
// the chosen response. The rejected response is never read.
Tensor sft_loss(const MultimodalModel& policy, std::span<const Sample* const> batch);

// Mean over the batch of -log sigmoid(beta * ((lc - rc) - (lr - rr))) where
// l* are policy log-probs and r* reference log-probs (constants, no grad).
// Log-probs are raw sums over response tokens, not length-normalized.
Tensor dpo_loss(const MultimodalModel& policy, const MultimodalModel& reference,
                std::span<const Sample* const> batch, double beta);

struct DpoStats {
    double margin_mean = 0.0;        // mean beta * (delta_c - delta_r)
    double implicit_reward_acc = 0.0; // fraction with delta_c > delta_r; ties 0.5
};

DpoStats dpo_stats(const MultimodalModel& policy, const MultimodalModel& reference,
                   std::span<const Sample* const> batch, double beta);

} // namespace minimm
