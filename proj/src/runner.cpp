#include "minimm/runner.hpp"

#include <filesystem>
#include <fstream>

#include "minimm/eval.hpp"
#include "minimm/tokenizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace minimm {

namespace {

void log_line(std::ostream* log, const std::string& line) {
    if (log) (*log) << line << "\n";
}

struct RunDirGuard {
    std::string dir;
    bool armed = true;

    ~RunDirGuard() {
        if (!armed || dir.empty()) return;
        std::error_code ec;
        fs::rename(dir, dir + ".failed", ec); // quarantine partial outputs
    }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

void append_sample_ids(std::ofstream& out, const std::string& stage, const TrainResult& r,
                       int64_t start_step) {
    for (size_t i = 0; i < r.step_sample_ids.size(); ++i) {
        out << stage << " step " << (start_step + int64_t(i)) << ":";
        for (int id : r.step_sample_ids[i]) out << " " << id;
        out << "\n";
    }
}

std::string stage_dir(const std::string& run_dir, const std::string& stage) {
    return (fs::path(run_dir) / "checkpoints" / stage).string();
}

} // namespace

std::string allocate_run_dir(const RunConfig& cfg) {
    const char* env_root = std::getenv("MINIMM_OUT_ROOT");
    const std::string root = env_root ? env_root : cfg.out_root;
    const std::string base = (fs::path(root) / "runs" /
                              (config_hash(cfg) + "-s" + std::to_string(cfg.seed)))
                                 .string();
    std::string dir = base;
    for (int i = 2; fs::exists(dir); ++i) dir = base + "-" + std::to_string(i);
    fs::create_directories(dir);
    return dir;
}

Dataset prepare_dataset(const DataConfig& data) {
    if (!data.path.empty() && fs::exists(fs::path(data.path) / "manifest.json"))
        return load_dataset(data.path);
    if (!data.generate)
        throw std::runtime_error("dataset: not found at '" + data.path +
                                 "' and generation is disabled");
    Dataset d = build_dataset(data.manifest);
    if (!data.path.empty()) write_dataset(d, data.path);
    return d;
}

namespace {

EvalReport eval_into(const RunConfig& cfg, MultimodalModel& model, const Dataset& data,
                     const std::string& out_dir, std::ostream* log) {
    const auto& e = cfg.eval;
    EvalReport rep;
    rep.config_hash = config_hash(cfg);
    rep.seed = cfg.seed;
    rep.metadata["alignment_metric"] = "mutual_knn_topk_overlap_cosine";
    rep.metadata["eval_seed"] = std::to_string(e.seed);

    const uint64_t pre_hash = model.params_hash();

    if (e.vqa) {
        auto samples = split_samples(data, "eval", e.vqa_samples);
        auto res = vqa_eval(model, samples, VqaConfig{e.vqa_max_new_tokens});
        for (const auto& [dom, acc] : res.domain_accuracy)
            rep.add("vqa_accuracy", dom, acc, cfg.seed);
        rep.add("vqa_accuracy", "macro", res.macro_accuracy, cfg.seed);
        rep.add("vqa_overlength_fraction", "",
                res.total ? double(res.overlength) / res.total : 0.0, cfg.seed);
        log_line(log, "eval: vqa macro " + format_double(res.macro_accuracy));
    }

    auto probe_set = split_samples(data, "probe", e.probe_samples);
    if (e.linear_probe && !probe_set.empty()) {
        std::vector<int> labels;
        for (const Sample* s : probe_set) {
            auto scene = scene_for_sample(data.manifest, *s);
            labels.push_back(probe_labels(scene, data.manifest.patch_size).dominant_class);
        }
        for (const char* source : {"encoder", "projected"}) {
            auto feats = extract_features(model, probe_set, source);
            LinearProbeConfig lp = e.linear;
            lp.seed = e.seed;
            rep.add("linear_probe_accuracy", source, linear_probe(feats, labels, lp), cfg.seed);
        }
    }
    if (e.segmentation && !probe_set.empty()) {
        SegProbeConfig sp = e.seg;
        sp.seed_base = e.seed;
        rep.add("segmentation_recall", "encoder", segmentation_probe(model, data, sp), cfg.seed);
    }

    if (!e.alignment_reference_checkpoints.empty()) {
        auto subset = probe_set;
        if (e.alignment_samples > 0 && int(subset.size()) > e.alignment_samples)
            subset.resize(size_t(e.alignment_samples));
        auto enc_feats = extract_features(model, subset, "encoder");
        std::vector<std::vector<int>> captions;
        for (const Sample* s : subset) {
            auto scene = scene_for_sample(data.manifest, *s);
            captions.push_back(tokenizer().tokenize(caption_for(scene.graph)));
        }
        double mean_score = 0.0;
        int ri = 0;
        for (const auto& ref_path : e.alignment_reference_checkpoints) {
            auto ck = load_checkpoint(ref_path);
            auto text_feats = text_tower_features(ck.model.lm, captions);
            const double score = mutual_knn_alignment(enc_feats, text_feats, e.alignment_k);
            rep.add("alignment_score", "ref" + std::to_string(ri++), score, cfg.seed);
            mean_score += score;
        }
        rep.add("alignment_score", "mean",
                mean_score / double(e.alignment_reference_checkpoints.size()), cfg.seed);
    }

    if (e.attribution) {
        fs::create_directories(fs::path(out_dir) / "attribution");
        std::vector<const Sample*> localized;
        for (const Sample* s : split_samples(data, "eval", 0))
            if (s->target_cell >= 0) localized.push_back(s);
        if (int(localized.size()) > e.attribution_samples)
            localized.resize(size_t(e.attribution_samples));
        for (const char* objective : {"sft", "dpo"}) {
            double mass = 0.0;
            for (const Sample* s : localized) {
                AttributionConfig ac = e.attr;
                ac.seed = e.seed;
                auto map = grad_attribution(model, *s, objective, ac);
                mass += attribution_cell_mass(map, s->target_cell, data.manifest.grid);
                const std::string base =
                    (fs::path(out_dir) / "attribution" /
                     (std::string(objective) + "_" + std::to_string(s->id)))
                        .string();
                write_attribution_pgm(map, base + ".pgm");
                write_attribution_raw(map, base + ".txt");
            }
            if (!localized.empty())
                rep.add("attribution_cell_mass", objective, mass / double(localized.size()),
                        cfg.seed);
        }
    }

    if (model.params_hash() != pre_hash)
        throw std::logic_error("evaluation mutated the model parameters");
    return rep;
}

} // namespace

EvalReport evaluate_model(const RunConfig& cfg, MultimodalModel& model, const Dataset& data,
                          const std::string& out_dir, std::ostream* log) {
    EvalReport rep = eval_into(cfg, model, data, out_dir, log);
    write_report(rep, out_dir);
    return rep;
}

RunOutcome run_train(const RunConfig& cfg, std::ostream* log) {
    RunOutcome out;
    out.run_dir = allocate_run_dir(cfg);
    RunDirGuard guard{out.run_dir};

    write_text((fs::path(out.run_dir) / "resolved_config.json").string(),
               resolved_json(cfg).dump(2) + "\n");
    std::ofstream run_log(fs::path(out.run_dir) / "run.log");
    run_log << "resolved config:\n" << resolved_json(cfg).dump(2) << "\n";
    std::ofstream ids_log(fs::path(out.run_dir) / "sample_ids.txt");

    Dataset data = prepare_dataset(cfg.data);

    MultimodalModel model;
    std::vector<StageRecord> provenance;
    if (!cfg.init_checkpoint.empty()) {
        auto ck = load_checkpoint(cfg.init_checkpoint);
        model = std::move(ck.model);
        provenance = std::move(ck.provenance);
        log_line(log, "loaded checkpoint " + cfg.init_checkpoint);
    } else {
        model = MultimodalModel(cfg.model.resolved_encoder(), ProjectorConfig{cfg.model.projector_hidden},
                                cfg.model.resolved_lm(), cfg.seed,
                                cfg.model.ensemble
                                    ? std::optional<VisionEncoderConfig>(cfg.model.resolved_encoder2())
                                    : std::nullopt);
    }

    const std::string hash = config_hash(cfg);
    for (const auto& stage : cfg.stages) {
        if (stage == "stage3")
            throw std::invalid_argument("run_train: stage3 runs through the stage3 command");
        StageConfig sc = stage == "align" ? cfg.align
                        : stage == "pretrain" ? cfg.pretrain
                                              : cfg.posttrain;
        run_log << "stage " << stage << " start, steps=" << sc.steps << " lr=" << sc.lr
                << " batch=" << sc.batch_size << " seed=" << sc.seed << "\n";

        const std::string ckpt_dir = stage_dir(out.run_dir, stage);
        auto hook = [&](int64_t step, Adam& opt) {
            if (sc.checkpoint_every > 0 && step % sc.checkpoint_every == 0 && step < sc.steps)
                save_checkpoint(ckpt_dir + "-step" + std::to_string(step), model, provenance,
                                cfg.seed, step, &opt);
        };

        TrainResult res;
        if (stage == "align") res = stage1_align(model, data, sc, nullptr, 0, hook);
        else if (stage == "pretrain") res = stage1_pretrain(model, data, sc, nullptr, 0, hook);
        else res = stage2_posttrain(model, data, sc, nullptr, nullptr, 0, hook);

        provenance.push_back({stage, stage == "posttrain" ? sc.method : "", sc.seed,
                              int(res.final_step), hash});
        save_checkpoint(ckpt_dir, model, provenance, cfg.seed, res.final_step);
        out.final_checkpoint = ckpt_dir;
        append_sample_ids(ids_log, stage, res, 0);
        for (size_t i = 0; i < res.losses.size(); ++i) {
            if (sc.log_every > 0 && (i % size_t(sc.log_every) == 0 || i + 1 == res.losses.size()))
                run_log << stage << " step " << i << " loss " << format_double(res.losses[i])
                        << "\n";
        }
        if (!res.losses.empty())
            log_line(log, "stage " + stage + " done, final loss " +
                              format_double(res.losses.back()));
    }

    if (cfg.run_eval) out.report = evaluate_model(cfg, model, data, out.run_dir, log);
    guard.armed = false;
    return out;
}

RunOutcome run_stage3(const RunConfig& cfg, std::ostream* log) {
    if (cfg.stage3_bundle.empty())
        throw std::invalid_argument("stage3: config must set stage3_bundle");
    RunOutcome out;
    out.run_dir = allocate_run_dir(cfg);
    RunDirGuard guard{out.run_dir};

    write_text((fs::path(out.run_dir) / "resolved_config.json").string(),
               resolved_json(cfg).dump(2) + "\n");
    std::ofstream run_log(fs::path(out.run_dir) / "run.log");
    run_log << "resolved config:\n" << resolved_json(cfg).dump(2) << "\n";
    std::ofstream ids_log(fs::path(out.run_dir) / "sample_ids.txt");

    Dataset data = prepare_dataset(cfg.data);
    auto bundle = load_pivot_bundle(cfg.stage3_bundle);
    auto model = make_stage3_model(bundle, cfg.model.resolved_lm(),
                                   cfg.stage3.added_projector_layers, cfg.seed,
                                   cfg.stage3.full_train);

    auto res = stage3_finetune(model, data, cfg.stage3);
    auto provenance = bundle.provenance;
    provenance.push_back({"stage3", "", cfg.stage3.seed, int(res.final_step), config_hash(cfg)});
    const std::string ckpt_dir = stage_dir(out.run_dir, "stage3");
    save_checkpoint(ckpt_dir, model, provenance, cfg.seed, res.final_step);
    out.final_checkpoint = ckpt_dir;
    append_sample_ids(ids_log, "stage3", res, 0);
    if (!res.losses.empty())
        log_line(log, "stage3 done, final loss " + format_double(res.losses.back()));

    if (cfg.run_eval) out.report = evaluate_model(cfg, model, data, out.run_dir, log);
    guard.armed = false;
    return out;
}

} // namespace minimm
