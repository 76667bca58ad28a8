#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "minimm/config.hpp"
#include "minimm/eval.hpp"
#include "minimm/grad_check.hpp"
#include "minimm/objectives.hpp"
#include "minimm/runner.hpp"
#include "minimm/sweep.hpp"
#include "minimm/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace minimm;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return json::parse(in);
}

void apply_overrides(RunConfig& cfg, uint64_t seed, bool seed_set, const std::string& out) {
    if (seed_set) {
        cfg.seed = seed;
        for (StageConfig* s : {&cfg.align, &cfg.pretrain, &cfg.posttrain, &cfg.stage3})
            s->seed = seed;
        cfg.eval.seed = seed;
    }
    if (!out.empty()) cfg.out_root = out;
}

int cmd_gen_data(const std::string& config_path, const std::string& out) {
    DatasetManifest m;
    if (!config_path.empty()) {
        json j = load_json(config_path);
        check_known_keys(j,
                         {"seed", "align_count", "pretrain_count", "posttrain_count",
                          "eval_count", "probe_count", "shift_ratio", "domain_mix",
                          "corrupt_mode", "image_size", "patch_size", "grid",
                          "max_objects", "shift_token_threshold"},
                         "");
        json merged = manifest_to_json(m);
        merged.update(j);
        m = manifest_from_json(merged);
    }
    auto d = build_dataset(m);
    write_dataset(d, out);
    std::cout << "wrote " << d.samples.size() << " samples to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, uint64_t seed, bool seed_set,
              const std::string& out) {
    RunConfig cfg = load_run_config(config_path);
    apply_overrides(cfg, seed, seed_set, out);
    auto outcome = run_train(cfg, &std::cout);
    std::cout << "run dir: " << outcome.run_dir << "\n";
    return 0;
}

int cmd_stage3(const std::string& config_path, uint64_t seed, bool seed_set,
               const std::string& out) {
    RunConfig cfg = load_run_config(config_path);
    apply_overrides(cfg, seed, seed_set, out);
    auto outcome = run_stage3(cfg, &std::cout);
    std::cout << "run dir: " << outcome.run_dir << "\n";
    return 0;
}

int cmd_pivot_extract(const std::string& checkpoint, int reuse, const std::string& out) {
    auto ck = load_checkpoint(checkpoint);
    auto bundle = pivot_extract(ck.model, reuse, ck.provenance);
    save_pivot_bundle(out, bundle);
    std::cout << "extracted encoder (+" << reuse << " projector layers) to " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& out) {
    RunConfig cfg = load_run_config(config_path);
    if (!out.empty()) cfg.out_root = out;
    auto ck = load_checkpoint(checkpoint);
    Dataset data = prepare_dataset(cfg.data);
    const std::string dir = out.empty() ? allocate_run_dir(cfg) : out;
    fs::create_directories(dir);
    auto rep = evaluate_model(cfg, ck.model, data, dir, &std::cout);
    std::cout << "report: " << (fs::path(dir) / "report.json").string() << "\n";
    for (const auto& row : rep.rows)
        std::cout << "  " << row.name << (row.domain.empty() ? "" : "/" + row.domain) << " = "
                  << format_double(row.value) << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, int workers, const std::string& out) {
    SweepConfig cfg = load_sweep_config(config_path);
    if (workers > 0) cfg.workers = workers;
    if (!out.empty()) cfg.out_root = out;
    auto cells = run_sweep(cfg, &std::cout);
    int ok = 0;
    for (const auto& c : cells) ok += c.ok;
    std::cout << "sweep finished: " << ok << "/" << cells.size() << " cells, aggregate at "
              << (fs::path(cfg.out_root) / "aggregate.csv").string() << "\n";
    return ok == int(cells.size()) ? 0 : 1;
}

int cmd_diff(const std::string& a, const std::string& b, const std::string& out) {
    auto ra = read_report(a);
    auto rb = read_report(b);
    auto rows = report_diff(ra, rb);
    const std::string table = diff_table(rows);
    std::cout << table;
    if (!out.empty()) {
        std::ofstream f(out);
        f << table;
    }
    return 0;
}

// Gradient verification over every op and both post-training losses on a
// small multimodal instance.
int cmd_grad_check(uint64_t seed, double tol) {
    int failures = 0;
    auto report = [&](const std::string& name, const GradCheckReport& rep) {
        std::cout << (rep.pass ? "[PASS] " : "[FAIL] ") << name
                  << "  max_rel_err=" << format_double(rep.max_rel_err) << " over "
                  << rep.coords_checked << " coords\n";
        failures += rep.pass ? 0 : 1;
    };

    Rng rng(seed);
    auto rnd = [&](Shape s, double scale = 1.0) {
        std::vector<double> v(shape_numel(s));
        for (auto& x : v) x = rng.normal() * scale;
        return Tensor::from_vector(s, std::move(v), true);
    };

    auto a = rnd({4, 6});
    auto b = rnd({4, 6});
    auto w = rnd({6, 5});
    auto g = rnd({6}, 0.5);
    auto bias = rnd({6}, 0.5);
    auto table = rnd({9, 4});
    std::vector<int> ids{1, 4, 4, 0, 8};
    std::vector<int> tg{0, 3, 1, 4};
    std::vector<int> mk{1, 1, 0, 1};

    using F = std::function<Tensor()>;
    std::vector<std::pair<std::string, F>> op_cases = {
        {"add", [&] { return ops::sum_all(ops::gelu(ops::add(a, b))); }},
        {"add_row_broadcast", [&] { return ops::sum_all(ops::gelu(ops::add(a, g))); }},
        {"sub", [&] { return ops::sum_all(ops::gelu(ops::sub(a, b))); }},
        {"multiply", [&] { return ops::sum_all(ops::gelu(ops::mul(a, b))); }},
        {"matmul", [&] { return ops::mean_all(ops::matmul(a, w)); }},
        {"transpose", [&] { return ops::sum_all(ops::gelu(ops::transpose(a))); }},
        {"gelu", [&] { return ops::sum_all(ops::gelu(a)); }},
        {"log_sigmoid", [&] { return ops::sum_all(ops::log_sigmoid(a)); }},
        {"layer_norm", [&] { return ops::sum_all(ops::gelu(ops::layer_norm(a, g, bias))); }},
        {"softmax_rows", [&] { return ops::sum_all(ops::gelu(ops::softmax_rows(a))); }},
        {"embedding_lookup",
         [&] { return ops::mean_all(ops::gelu(ops::embedding_lookup(table, ids))); }},
        {"slice_concat",
         [&] {
             return ops::sum_all(ops::gelu(
                 ops::concat_cols(ops::slice_cols(a, 1, 4), ops::slice_rows(a, 0, 4))));
         }},
        {"reductions", [&] { return ops::sum_all(ops::gelu(ops::mean_rows(a))); }},
        {"softmax_cross_entropy",
         [&] { return ops::softmax_cross_entropy(ops::matmul(a, w), tg, mk); }},
        {"masked_logprob_sum",
         [&] { return ops::masked_logprob_sum(ops::matmul(a, w), tg, mk); }},
    };
    for (auto& [name, f] : op_cases) {
        std::vector<Tensor> wrt{a, b, w, g, bias, table};
        report("op " + name, grad_check(f, wrt, 0, tol, seed));
    }

    // full model losses on a fixed batch
    VisionEncoderConfig ec;
    ec.image_size = 16;
    ec.patch_size = 8;
    ec.embed_dim = 16;
    ec.depth = 1;
    ec.heads = 2;
    LmConfig lc;
    lc.embed_dim = 32;
    lc.depth = 1;
    lc.heads = 2;
    lc.max_seq_len = 64;
    MultimodalModel policy(ec, ProjectorConfig{}, lc, seed);
    MultimodalModel reference(ec, ProjectorConfig{}, lc, seed + 1);

    std::vector<Sample> batch;
    for (int i = 0; i < 2; ++i) {
        Sample s;
        s.id = i;
        s.image.h = s.image.w = 16;
        s.image.rgb.resize(16 * 16 * 3);
        for (auto& px : s.image.rgb) px = uint8_t(rng.next() % 256);
        s.q_tokens = {7, 8, 9};
        s.chosen_tokens = {20, 21};
        s.rejected_tokens = {30, 31};
        batch.push_back(std::move(s));
    }
    std::vector<const Sample*> bp{&batch[0], &batch[1]};

    std::vector<Tensor> wrt;
    policy.visit_params([&](const std::string&, Tensor& t) { wrt.push_back(t); });
    report("loss sft",
           grad_check([&] { return sft_loss(policy, bp); }, wrt, 3, tol, seed));
    report("loss dpo",
           grad_check([&] { return dpo_loss(policy, reference, bp, 0.3); }, wrt, 3, tol, seed));

    std::cout << (failures ? "grad-check: FAILURES present\n" : "grad-check: all passed\n");
    return failures ? 1 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"miniature multimodal preference-optimization laboratory"};
    app.require_subcommand(1);

    std::string config_path, out, checkpoint, report_a, report_b;
    uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0, reuse = 1;
    double tol = 1e-4;

    auto add_common = [&](CLI::App* sub, bool with_seed = true) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--out", out, "output root / directory");
        if (with_seed)
            sub->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
                seed_set = true;
            });
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, false);
    gen->callback([&] { std::exit(cmd_gen_data(config_path, out.empty() ? "data" : out)); });

    auto* train = app.add_subcommand("train", "run the configured stage chain");
    add_common(train);
    train->callback([&] { std::exit(cmd_train(config_path, seed, seed_set, out)); });

    auto* pivot = app.add_subcommand("pivot-extract",
                                     "detach and freeze a trained encoder (+projector prefix)");
    pivot->add_option("--checkpoint", checkpoint, "source checkpoint dir")->required();
    pivot->add_option("--reuse", reuse, "projector layers to carry along (0..2)");
    pivot->add_option("--out", out, "bundle output dir")->required();
    pivot->callback([&] { std::exit(cmd_pivot_extract(checkpoint, reuse, out)); });

    auto* st3 = app.add_subcommand("stage3", "finetune a fresh LM on a frozen extracted encoder");
    add_common(st3);
    st3->callback([&] { std::exit(cmd_stage3(config_path, seed, seed_set, out)); });

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev, false);
    ev->add_option("--checkpoint", checkpoint, "checkpoint dir")->required();
    ev->callback([&] { std::exit(cmd_eval(config_path, checkpoint, out)); });

    auto* sw = app.add_subcommand("sweep", "run an experiment grid and aggregate");
    add_common(sw, false);
    sw->add_option("--workers", workers, "concurrent cells");
    sw->callback([&] { std::exit(cmd_sweep(config_path, workers, out)); });

    auto* df = app.add_subcommand("diff", "signed metric deltas between two reports");
    df->add_option("reportA", report_a, "first report.json")->required();
    df->add_option("reportB", report_b, "second report.json")->required();
    df->add_option("--out", out, "write the delta table here");
    df->callback([&] { std::exit(cmd_diff(report_a, report_b, out)); });

    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
    gc->add_option("--seed", seed, "seed");
    gc->add_option("--tol", tol, "relative tolerance");
    gc->callback([&] { std::exit(cmd_grad_check(seed ? seed : 1, tol)); });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
