#include "minimm/pipeline.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace minimm {

double cosine_lr(double base, int step, int total_steps, double warmup_frac) {
    if (step >= total_steps) return 0.0;
    const int warmup = std::max(1, int(std::lround(warmup_frac * total_steps)));
    if (step < warmup) return base * double(step + 1) / double(warmup);
    const int span = std::max(1, total_steps - warmup);
    const double progress = double(step - warmup) / double(span);
    return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

std::vector<int> batch_indices(uint64_t seed, int step, int dataset_size, int batch_size) {
    if (dataset_size <= 0) throw std::invalid_argument("batch_indices: empty dataset");
    if (batch_size >= dataset_size) {
        // full-batch regime: every step sees the whole set in order
        std::vector<int> all(static_cast<size_t>(dataset_size));
        for (int i = 0; i < dataset_size; ++i) all[size_t(i)] = i;
        return all;
    }
    const uint64_t base = mix_seed(seed ^ 0xBA7C4ULL, uint64_t(step));
    std::vector<int> out(static_cast<size_t>(batch_size));
    for (int j = 0; j < batch_size; ++j)
        out[size_t(j)] = int(splitmix64(base + uint64_t(j)) % uint64_t(dataset_size));
    return out;
}

std::vector<const Sample*> split_samples(const Dataset& data, const std::string& split,
                                         int max_samples) {
    const auto& idx = data.split(split);
    std::vector<const Sample*> out;
    const size_t n = max_samples > 0 ? std::min(size_t(max_samples), idx.size()) : idx.size();
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) out.push_back(&data.samples[size_t(idx[i])]);
    return out;
}

TrainResult train_stage(MultimodalModel& model, const std::vector<const Sample*>& samples,
                        const StageConfig& cfg, const MultimodalModel* reference,
                        Adam* resume_opt, int64_t start_step, const StepHook& hook) {
    if (samples.empty()) throw std::invalid_argument("train_stage: empty sample set");
    const bool dpo = cfg.stage == "posttrain" && cfg.method == "dpo";
    if (dpo && !reference)
        throw std::invalid_argument("train_stage: dpo requires a reference snapshot");

    model.apply_trainability();
    auto params = model.trainable_params();
    if (params.empty()) throw std::invalid_argument("train_stage: nothing is trainable");

    std::optional<Adam> local_opt;
    Adam* opt = resume_opt;
    if (!opt) {
        local_opt.emplace(params, AdamConfig{.lr = cfg.lr});
        opt = &*local_opt;
    }

    TrainResult res;
    const int n = int(samples.size());
    for (int64_t step = start_step; step < cfg.steps; ++step) {
        const auto idx = batch_indices(cfg.seed, int(step), n, cfg.batch_size);
        std::vector<const Sample*> batch;
        std::vector<int> ids;
        batch.reserve(idx.size());
        for (int i : idx) {
            batch.push_back(samples[size_t(i)]);
            ids.push_back(samples[size_t(i)]->id);
        }

        Tensor loss = dpo ? dpo_loss(model, *reference, batch, cfg.beta)
                          : sft_loss(model, batch);
        opt->zero_grad();
        backward(loss);
        opt->step(cosine_lr(cfg.lr, int(step), cfg.steps, cfg.warmup_frac));

        res.losses.push_back(loss.scalar_value());
        res.step_sample_ids.push_back(std::move(ids));
        res.final_step = step + 1;
        if (hook) hook(step + 1, *opt);
    }
    return res;
}

TrainResult stage1_align(MultimodalModel& model, const Dataset& data, const StageConfig& cfg,
                         Adam* resume_opt, int64_t start_step, const StepHook& hook) {
    if (cfg.stage != "align")
        throw std::invalid_argument("stage1_align: config stage must be 'align'");
    // alignment trains the projector and nothing else
    model.flags = {.encoder = false, .projector = true, .lm = false};
    return train_stage(model, split_samples(data, "align", cfg.max_samples), cfg, nullptr,
                       resume_opt, start_step, hook);
}

TrainResult stage1_pretrain(MultimodalModel& model, const Dataset& data, const StageConfig& cfg,
                            Adam* resume_opt, int64_t start_step, const StepHook& hook) {
    if (cfg.stage != "pretrain")
        throw std::invalid_argument("stage1_pretrain: config stage must be 'pretrain'");
    model.flags = {.encoder = true, .projector = true, .lm = true};
    return train_stage(model, split_samples(data, "pretrain", cfg.max_samples), cfg, nullptr,
                       resume_opt, start_step, hook);
}

TrainResult stage2_posttrain(MultimodalModel& model, const Dataset& data, const StageConfig& cfg,
                             const MultimodalModel* reference, Adam* resume_opt,
                             int64_t start_step, const StepHook& hook) {
    if (cfg.stage != "posttrain")
        throw std::invalid_argument("stage2_posttrain: config stage must be 'posttrain'");
    if (cfg.method != "sft" && cfg.method != "dpo")
        throw std::invalid_argument("stage2_posttrain: method must be sft or dpo");
    model.flags = {.encoder = true, .projector = true, .lm = true};
    std::optional<MultimodalModel> snapshot;
    if (cfg.method == "dpo" && !reference) {
        snapshot = model.clone(); // entry snapshot; stays frozen for the whole stage
        reference = &*snapshot;
    }
    return train_stage(model, split_samples(data, "posttrain", cfg.max_samples), cfg,
                       reference, resume_opt, start_step, hook);
}

MultimodalModel make_stage3_model(const PivotBundle& bundle, const LmConfig& fresh_lm,
                                  int added_projector_layers, uint64_t seed, bool full_train) {
    if (bundle.reuse + added_projector_layers < 1)
        throw std::invalid_argument("stage3: reuse + added projector layers must be >= 1");

    LmConfig lm_cfg = fresh_lm;
    MultimodalModel m(bundle.enc_cfg, ProjectorConfig{}, lm_cfg, seed, bundle.enc2_cfg);

    // restore the extracted encoder bit-for-bit
    std::map<std::string, const std::vector<double>*> by_name;
    for (const auto& [name, vals] : bundle.encoder_params) by_name[name] = &vals;
    auto assign = [&](const std::string& name, Tensor& t) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("stage3: bundle missing encoder array '" + name + "'");
        if (it->second->size() != t.numel())
            throw std::runtime_error("stage3: bundle array size mismatch for '" + name + "'");
        t.data() = *it->second;
    };
    m.encoder.visit_params("enc.", assign);
    if (m.encoder2) m.encoder2->visit_params("enc2.", assign);

    // projector = reused frozen prefix + fresh bridging layers into the new LM
    const int lm_dim = m.lm.config().embed_dim;
    std::vector<int> dims = bundle.reused_dims; // {in} or {in, out0, ...}
    for (int i = 0; i < added_projector_layers; ++i) dims.push_back(lm_dim);
    if (dims.back() != lm_dim)
        throw std::invalid_argument(
            "stage3: reused projector output does not match the LM width and no "
            "added layer bridges it");
    if (int(dims.size()) < 2)
        throw std::invalid_argument("stage3: projector needs at least one layer");
    m.projector = Projector(dims, mix_seed(seed, 0x53));
    std::map<std::string, const std::vector<double>*> proj_by_name;
    for (const auto& [name, vals] : bundle.projector_params) proj_by_name[name] = &vals;
    for (size_t li = 0; li < size_t(bundle.reuse); ++li) {
        auto fetch = [&](const std::string& name, Tensor& t) {
            auto it = proj_by_name.find(name);
            if (it == proj_by_name.end() || it->second->size() != t.numel())
                throw std::runtime_error("stage3: bundle projector array missing or mismatched: " + name);
            t.data() = *it->second;
        };
        fetch("proj.l" + std::to_string(li) + ".w", m.projector.layers[li].w);
        fetch("proj.l" + std::to_string(li) + ".b", m.projector.layers[li].b);
        m.projector.frozen[li] = true;
    }

    m.flags = full_train ? TrainableFlags{true, true, true}
                         : TrainableFlags{false, true, true};
    if (full_train)
        std::fill(m.projector.frozen.begin(), m.projector.frozen.end(), false);
    m.apply_trainability();
    return m;
}

TrainResult stage3_finetune(MultimodalModel& model, const Dataset& data, const StageConfig& cfg,
                            Adam* resume_opt, int64_t start_step, const StepHook& hook) {
    if (cfg.stage != "stage3")
        throw std::invalid_argument("stage3_finetune: config stage must be 'stage3'");
    return train_stage(model, split_samples(data, "pretrain", cfg.max_samples), cfg, nullptr,
                       resume_opt, start_step, hook);
}

} // namespace minimm
