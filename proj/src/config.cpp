#include "minimm/config.hpp"

#include <fstream>
#include <stdexcept>

using nlohmann::json;

namespace minimm {

namespace {

template <typename T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

int encoder_preset_depth(const std::string& p) { return encoder_preset(p).depth; }
int lm_preset_depth(const std::string& p) { return lm_preset(p).depth; }

StageConfig default_stage(const char* stage, int steps, double lr) {
    StageConfig c;
    c.stage = stage;
    c.steps = steps;
    c.lr = lr;
    c.batch_size = 32;
    c.seed = 0;
    return c;
}

StageConfig parse_stage(const json& j, StageConfig base, const std::string& path) {
    check_known_keys(j,
                     {"steps", "lr", "batch_size", "method", "beta", "warmup_frac",
                      "checkpoint_every", "log_every", "max_samples", "seed",
                      "pivot_projector_reuse", "added_projector_layers", "full_train"},
                     path);
    take(j, "steps", base.steps);
    take(j, "lr", base.lr);
    take(j, "batch_size", base.batch_size);
    take(j, "method", base.method);
    take(j, "beta", base.beta);
    take(j, "warmup_frac", base.warmup_frac);
    take(j, "checkpoint_every", base.checkpoint_every);
    take(j, "log_every", base.log_every);
    take(j, "max_samples", base.max_samples);
    take(j, "seed", base.seed);
    take(j, "pivot_projector_reuse", base.pivot_projector_reuse);
    take(j, "added_projector_layers", base.added_projector_layers);
    take(j, "full_train", base.full_train);
    return base;
}

json stage_to_json(const StageConfig& c) {
    return json{{"steps", c.steps},
                {"lr", c.lr},
                {"batch_size", c.batch_size},
                {"method", c.method},
                {"beta", c.beta},
                {"warmup_frac", c.warmup_frac},
                {"checkpoint_every", c.checkpoint_every},
                {"log_every", c.log_every},
                {"max_samples", c.max_samples},
                {"seed", c.seed},
                {"pivot_projector_reuse", c.pivot_projector_reuse},
                {"added_projector_layers", c.added_projector_layers},
                {"full_train", c.full_train}};
}

VisionEncoderConfig parse_encoder(const json& j, VisionEncoderConfig base, std::string* preset,
                                  const std::string& path) {
    check_known_keys(j, {"preset", "image_size", "patch_size", "embed_dim", "depth", "heads"},
                     path);
    take(j, "preset", *preset);
    take(j, "image_size", base.image_size);
    take(j, "patch_size", base.patch_size);
    take(j, "embed_dim", base.embed_dim);
    take(j, "depth", base.depth);
    take(j, "heads", base.heads);
    return base;
}

json encoder_to_json(const VisionEncoderConfig& c, const std::string& preset) {
    return json{{"preset", preset},       {"image_size", c.image_size},
                {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
                {"depth", c.depth},       {"heads", c.heads}};
}

} // namespace

void check_known_keys(const json& j, const std::vector<std::string>& allowed,
                      const std::string& path) {
    if (!j.is_object())
        throw std::invalid_argument("config: expected an object at '" + path + "'");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const auto& a : allowed) ok = ok || a == key;
        if (!ok)
            throw std::invalid_argument("config: unknown field '" +
                                        (path.empty() ? key : path + "." + key) + "'");
    }
}

VisionEncoderConfig ModelArchConfig::resolved_encoder() const {
    VisionEncoderConfig c = encoder;
    if (c.depth == 0) c.depth = encoder_preset.empty() ? 2 : encoder_preset_depth(encoder_preset);
    return c;
}

VisionEncoderConfig ModelArchConfig::resolved_encoder2() const {
    VisionEncoderConfig c = encoder2;
    if (c.depth == 0) c.depth = encoder2_preset.empty() ? 2 : encoder_preset_depth(encoder2_preset);
    return c;
}

LmConfig ModelArchConfig::resolved_lm() const {
    LmConfig c = lm;
    if (c.depth == 0) c.depth = lm_preset.empty() ? 3 : lm_preset_depth(lm_preset);
    return c;
}

RunConfig::RunConfig() {
    align = default_stage("align", 300, 3e-4);
    pretrain = default_stage("pretrain", 3000, 3e-4);
    posttrain = default_stage("posttrain", 500, 0.0); // 0 = by method (sft 3e-4, dpo 3e-5)
    posttrain.method = "dpo";
    stage3 = default_stage("stage3", 1500, 3e-4);
    model.encoder.depth = 0;
    model.encoder2.depth = 0;
    model.lm.depth = 0;
}

RunConfig parse_run_config(const json& j) {
    check_known_keys(j,
                     {"seed", "out_root", "stages", "init_checkpoint", "stage3_bundle", "model",
                      "data", "align", "pretrain", "posttrain", "stage3", "run_eval", "eval"},
                     "");
    RunConfig cfg;
    take(j, "seed", cfg.seed);
    take(j, "out_root", cfg.out_root);
    take(j, "stages", cfg.stages);
    take(j, "init_checkpoint", cfg.init_checkpoint);
    take(j, "stage3_bundle", cfg.stage3_bundle);

    if (j.contains("model")) {
        const auto& jm = j.at("model");
        check_known_keys(jm, {"encoder", "lm", "projector_hidden", "ensemble", "encoder2"},
                         "model");
        if (jm.contains("encoder"))
            cfg.model.encoder = parse_encoder(jm.at("encoder"), cfg.model.encoder,
                                              &cfg.model.encoder_preset, "model.encoder");
        if (jm.contains("encoder2"))
            cfg.model.encoder2 = parse_encoder(jm.at("encoder2"), cfg.model.encoder2,
                                               &cfg.model.encoder2_preset, "model.encoder2");
        if (jm.contains("lm")) {
            const auto& jl = jm.at("lm");
            check_known_keys(jl, {"preset", "vocab_size", "embed_dim", "depth", "heads",
                                  "max_seq_len"},
                             "model.lm");
            take(jl, "preset", cfg.model.lm_preset);
            take(jl, "vocab_size", cfg.model.lm.vocab_size);
            take(jl, "embed_dim", cfg.model.lm.embed_dim);
            take(jl, "depth", cfg.model.lm.depth);
            take(jl, "heads", cfg.model.lm.heads);
            take(jl, "max_seq_len", cfg.model.lm.max_seq_len);
        }
        take(jm, "projector_hidden", cfg.model.projector_hidden);
        take(jm, "ensemble", cfg.model.ensemble);
    }

    if (j.contains("data")) {
        const auto& jd = j.at("data");
        check_known_keys(jd, {"path", "generate", "manifest"}, "data");
        take(jd, "path", cfg.data.path);
        take(jd, "generate", cfg.data.generate);
        if (jd.contains("manifest")) {
            const auto& jman = jd.at("manifest");
            check_known_keys(jman,
                             {"seed", "align_count", "pretrain_count", "posttrain_count",
                              "eval_count", "probe_count", "shift_ratio", "domain_mix",
                              "corrupt_mode", "image_size", "patch_size", "grid",
                              "max_objects", "shift_token_threshold"},
                             "data.manifest");
            json merged = manifest_to_json(cfg.data.manifest);
            merged.update(jman);
            cfg.data.manifest = manifest_from_json(merged);
        }
    }

    if (j.contains("align")) cfg.align = parse_stage(j.at("align"), cfg.align, "align");
    if (j.contains("pretrain"))
        cfg.pretrain = parse_stage(j.at("pretrain"), cfg.pretrain, "pretrain");
    if (j.contains("posttrain"))
        cfg.posttrain = parse_stage(j.at("posttrain"), cfg.posttrain, "posttrain");
    if (j.contains("stage3")) cfg.stage3 = parse_stage(j.at("stage3"), cfg.stage3, "stage3");

    take(j, "run_eval", cfg.run_eval);
    if (j.contains("eval")) {
        const auto& je = j.at("eval");
        check_known_keys(je,
                         {"seed", "vqa", "vqa_max_new_tokens", "vqa_samples", "linear_probe",
                          "linear", "segmentation", "seg", "probe_samples",
                          "alignment_reference_checkpoints", "alignment_k", "alignment_samples",
                          "attribution", "attr", "attribution_samples"},
                         "eval");
        take(je, "seed", cfg.eval.seed);
        take(je, "vqa", cfg.eval.vqa);
        take(je, "vqa_max_new_tokens", cfg.eval.vqa_max_new_tokens);
        take(je, "vqa_samples", cfg.eval.vqa_samples);
        take(je, "linear_probe", cfg.eval.linear_probe);
        if (je.contains("linear")) {
            const auto& jl = je.at("linear");
            check_known_keys(jl, {"heldout_frac", "mode", "iters", "lr", "l2"}, "eval.linear");
            take(jl, "heldout_frac", cfg.eval.linear.heldout_frac);
            take(jl, "mode", cfg.eval.linear.mode);
            take(jl, "iters", cfg.eval.linear.iters);
            take(jl, "lr", cfg.eval.linear.lr);
            take(jl, "l2", cfg.eval.linear.l2);
        }
        take(je, "segmentation", cfg.eval.segmentation);
        if (je.contains("seg")) {
            const auto& js = je.at("seg");
            check_known_keys(js, {"epochs", "lr", "hidden", "batch", "heldout_frac", "seeds"},
                             "eval.seg");
            take(js, "epochs", cfg.eval.seg.epochs);
            take(js, "lr", cfg.eval.seg.lr);
            take(js, "hidden", cfg.eval.seg.hidden);
            take(js, "batch", cfg.eval.seg.batch);
            take(js, "heldout_frac", cfg.eval.seg.heldout_frac);
            take(js, "seeds", cfg.eval.seg.seeds);
        }
        take(je, "probe_samples", cfg.eval.probe_samples);
        take(je, "alignment_reference_checkpoints", cfg.eval.alignment_reference_checkpoints);
        take(je, "alignment_k", cfg.eval.alignment_k);
        take(je, "alignment_samples", cfg.eval.alignment_samples);
        take(je, "attribution", cfg.eval.attribution);
        if (je.contains("attr")) {
            const auto& ja = je.at("attr");
            check_known_keys(ja, {"train_steps", "schedule_total", "lr", "beta"}, "eval.attr");
            take(ja, "train_steps", cfg.eval.attr.train_steps);
            take(ja, "schedule_total", cfg.eval.attr.schedule_total);
            take(ja, "lr", cfg.eval.attr.lr);
            take(ja, "beta", cfg.eval.attr.beta);
        }
        take(je, "attribution_samples", cfg.eval.attribution_samples);
    }

    // resolve derived defaults
    if (cfg.posttrain.lr == 0.0)
        cfg.posttrain.lr = cfg.posttrain.method == "dpo" ? 3e-5 : 3e-4;
    for (StageConfig* s : {&cfg.align, &cfg.pretrain, &cfg.posttrain, &cfg.stage3})
        if (s->seed == 0) s->seed = cfg.seed;
    if (cfg.eval.seed == 0) cfg.eval.seed = cfg.seed;

    for (const auto& st : cfg.stages)
        if (st != "align" && st != "pretrain" && st != "posttrain" && st != "stage3")
            throw std::invalid_argument("config: unknown stage '" + st + "'");
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    return parse_run_config(json::parse(in));
}

json resolved_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out_root"] = cfg.out_root;
    j["stages"] = cfg.stages;
    j["init_checkpoint"] = cfg.init_checkpoint;
    j["stage3_bundle"] = cfg.stage3_bundle;
    j["model"] = json{{"encoder", encoder_to_json(cfg.model.resolved_encoder(),
                                                  cfg.model.encoder_preset)},
                      {"lm",
                       [&] {
                           const auto lm = cfg.model.resolved_lm();
                           return json{{"preset", cfg.model.lm_preset},
                                       {"vocab_size", lm.vocab_size},
                                       {"embed_dim", lm.embed_dim},
                                       {"depth", lm.depth},
                                       {"heads", lm.heads},
                                       {"max_seq_len", lm.max_seq_len}};
                       }()},
                      {"projector_hidden", cfg.model.projector_hidden},
                      {"ensemble", cfg.model.ensemble}};
    if (cfg.model.ensemble)
        j["model"]["encoder2"] =
            encoder_to_json(cfg.model.resolved_encoder2(), cfg.model.encoder2_preset);
    j["data"] = json{{"path", cfg.data.path},
                     {"generate", cfg.data.generate},
                     {"manifest", manifest_to_json(cfg.data.manifest)}};
    j["align"] = stage_to_json(cfg.align);
    j["pretrain"] = stage_to_json(cfg.pretrain);
    j["posttrain"] = stage_to_json(cfg.posttrain);
    j["stage3"] = stage_to_json(cfg.stage3);
    j["run_eval"] = cfg.run_eval;
    j["eval"] = json{{"seed", cfg.eval.seed},
                     {"vqa", cfg.eval.vqa},
                     {"vqa_max_new_tokens", cfg.eval.vqa_max_new_tokens},
                     {"vqa_samples", cfg.eval.vqa_samples},
                     {"linear_probe", cfg.eval.linear_probe},
                     {"linear", {{"heldout_frac", cfg.eval.linear.heldout_frac},
                                 {"mode", cfg.eval.linear.mode},
                                 {"iters", cfg.eval.linear.iters},
                                 {"lr", cfg.eval.linear.lr},
                                 {"l2", cfg.eval.linear.l2}}},
                     {"segmentation", cfg.eval.segmentation},
                     {"seg", {{"epochs", cfg.eval.seg.epochs},
                              {"lr", cfg.eval.seg.lr},
                              {"hidden", cfg.eval.seg.hidden},
                              {"batch", cfg.eval.seg.batch},
                              {"heldout_frac", cfg.eval.seg.heldout_frac},
                              {"seeds", cfg.eval.seg.seeds}}},
                     {"probe_samples", cfg.eval.probe_samples},
                     {"alignment_reference_checkpoints",
                      cfg.eval.alignment_reference_checkpoints},
                     {"alignment_k", cfg.eval.alignment_k},
                     {"alignment_samples", cfg.eval.alignment_samples},
                     {"attribution", cfg.eval.attribution},
                     {"attr", {{"train_steps", cfg.eval.attr.train_steps},
                               {"schedule_total", cfg.eval.attr.schedule_total},
                               {"lr", cfg.eval.attr.lr},
                               {"beta", cfg.eval.attr.beta}}},
                     {"attribution_samples", cfg.eval.attribution_samples}};
    return j;
}

std::string config_hash(const RunConfig& cfg) {
    json j = resolved_json(cfg);
    j["seed"] = 0;
    j["eval"]["seed"] = 0;
    for (const char* st : {"align", "pretrain", "posttrain", "stage3"}) j[st]["seed"] = 0;
    const std::string dump = j.dump();
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  (unsigned long long)fnv1a64(dump.data(), dump.size()));
    return buf;
}

} // namespace minimm
