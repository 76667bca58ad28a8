#include "minimm/objectives.hpp"

#include <stdexcept>

#include "minimm/tokenizer.hpp"

namespace minimm {

std::vector<int> model_query(const Sample& s) {
    std::vector<int> q{Tokenizer::kBos};
    q.insert(q.end(), s.q_tokens.begin(), s.q_tokens.end());
    return q;
}

std::vector<int> model_response(const std::vector<int>& answer_tokens) {
    std::vector<int> r = answer_tokens;
    r.push_back(Tokenizer::kEos);
    return r;
}

Tensor sft_loss(const MultimodalModel& policy, std::span<const Sample* const> batch) {
    if (batch.empty()) throw std::invalid_argument("sft_loss: empty batch");
    std::vector<Tensor> terms;
    terms.reserve(batch.size());
    for (const Sample* s : batch) {
        terms.push_back(policy.response_ce_mean(s->image, model_query(*s),
                                                model_response(s->chosen_tokens)));
    }
    return ops::scale(ops::sum_list(terms), 1.0 / double(batch.size()));
}

namespace {

void check_pair(const MultimodalModel& policy, const MultimodalModel& reference) {
    if (policy.lm.config().vocab_size != reference.lm.config().vocab_size)
        throw std::invalid_argument("dpo: policy and reference vocabularies differ");
}

struct PairLogprobs {
    Tensor policy_chosen, policy_rejected; // graph-bearing
    double ref_chosen = 0.0, ref_rejected = 0.0;
};

PairLogprobs pair_logprobs(const MultimodalModel& policy, const MultimodalModel& reference,
                           const Sample& s) {
    PairLogprobs out;
    const auto q = model_query(s);
    const auto yc = model_response(s.chosen_tokens);
    const auto yr = model_response(s.rejected_tokens);
    out.policy_chosen = policy.response_logprob(s.image, q, yc);
    out.policy_rejected = policy.response_logprob(s.image, q, yr);
    {
        NoGradGuard ng;
        out.ref_chosen = reference.response_logprob(s.image, q, yc).scalar_value();
        out.ref_rejected = reference.response_logprob(s.image, q, yr).scalar_value();
    }
    return out;
}

} // namespace

Tensor dpo_loss(const MultimodalModel& policy, const MultimodalModel& reference,
                std::span<const Sample* const> batch, double beta) {
    if (batch.empty()) throw std::invalid_argument("dpo_loss: empty batch");
    if (beta < 0.0) throw std::invalid_argument("dpo_loss: beta must be >= 0");
    check_pair(policy, reference);
    std::vector<Tensor> terms;
    terms.reserve(batch.size());
    for (const Sample* s : batch) {
        auto lp = pair_logprobs(policy, reference, *s);
        // z = beta * ((lc - lr) - (rc - rr)); bitwise zero when policy == reference
        auto z = ops::scale(ops::sub(ops::sub(lp.policy_chosen, lp.policy_rejected),
                                     Tensor::scalar(lp.ref_chosen - lp.ref_rejected)),
                            beta);
        terms.push_back(ops::neg(ops::log_sigmoid(z)));
    }
    return ops::scale(ops::sum_list(terms), 1.0 / double(batch.size()));
}

DpoStats dpo_stats(const MultimodalModel& policy, const MultimodalModel& reference,
                   std::span<const Sample* const> batch, double beta) {
    if (batch.empty()) throw std::invalid_argument("dpo_stats: empty batch");
    check_pair(policy, reference);
    NoGradGuard ng;
    DpoStats st;
    for (const Sample* s : batch) {
        auto lp = pair_logprobs(policy, reference, *s);
        const double dc = lp.policy_chosen.scalar_value() - lp.ref_chosen;
        const double dr = lp.policy_rejected.scalar_value() - lp.ref_rejected;
        st.margin_mean += beta * (dc - dr);
        if (dc > dr) st.implicit_reward_acc += 1.0;
        else if (dc == dr) st.implicit_reward_acc += 0.5;
    }
    st.margin_mean /= double(batch.size());
    st.implicit_reward_acc /= double(batch.size());
    return st;
}

} // namespace minimm
