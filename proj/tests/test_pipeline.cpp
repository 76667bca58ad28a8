#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "minimm/pipeline.hpp"

using namespace minimm;
namespace fs = std::filesystem;

namespace {

DatasetManifest tiny_manifest(double shift = 0.0) {
    DatasetManifest m;
    m.seed = 77;
    m.align_count = 16;
    m.pretrain_count = 24;
    m.posttrain_count = 24;
    m.eval_count = 8;
    m.probe_count = 4;
    m.shift_ratio = shift;
    return m;
}

MultimodalModel tiny_mm(uint64_t seed) {
    VisionEncoderConfig enc;
    enc.image_size = 64;
    enc.patch_size = 8;
    enc.embed_dim = 16;
    enc.depth = 1;
    enc.heads = 2;
    LmConfig lm;
    lm.embed_dim = 32;
    lm.depth = 1;
    lm.heads = 2;
    lm.max_seq_len = 160;
    return MultimodalModel(enc, ProjectorConfig{}, lm, seed);
}

StageConfig cfg_for(const std::string& stage, int steps, double lr, int batch,
                    uint64_t seed = 5) {
    StageConfig c;
    c.stage = stage;
    c.steps = steps;
    c.lr = lr;
    c.batch_size = batch;
    c.seed = seed;
    return c;
}

std::vector<double> bytes_of(MultimodalModel& m) {
    std::vector<double> out;
    m.visit_params([&](const std::string&, Tensor& t) {
        out.insert(out.end(), t.data().begin(), t.data().end());
    });
    return out;
}

const Dataset& shared_data() {
    static const Dataset d = build_dataset(tiny_manifest());
    return d;
}

} // namespace

TEST_CASE("cosine schedule: positive at step 0, warmup then decay to ~0") {
    const double base = 1e-3;
    CHECK(cosine_lr(base, 0, 100, 0.03) > 0.0);
    CHECK(cosine_lr(base, 2, 100, 0.03) == doctest::Approx(base));
    CHECK(cosine_lr(base, 99, 100, 0.03) < 1e-5);
    double prev = cosine_lr(base, 3, 100, 0.03);
    for (int s = 4; s < 100; ++s) {
        const double cur = cosine_lr(base, s, 100, 0.03);
        CHECK(cur <= prev + 1e-15);
        prev = cur;
    }
}

TEST_CASE("batch selection is a pure function of (seed, step)") {
    auto a = batch_indices(9, 4, 1000, 16);
    auto b = batch_indices(9, 4, 1000, 16);
    CHECK(a == b);
    CHECK(batch_indices(9, 5, 1000, 16) != a);
    CHECK(batch_indices(10, 4, 1000, 16) != a);
    auto full = batch_indices(9, 0, 8, 32);
    CHECK(full.size() == 8);
    for (int i = 0; i < 8; ++i) CHECK(full[size_t(i)] == i);
}

TEST_CASE("stage1_align trains the projector only and descends on a fixed batch") {
    auto model = tiny_mm(3);
    std::vector<double> enc_before, lm_before;
    model.encoder.visit_params("", [&](const std::string&, Tensor& t) {
        enc_before.insert(enc_before.end(), t.data().begin(), t.data().end());
    });
    model.lm.visit_params("", [&](const std::string&, Tensor& t) {
        lm_before.insert(lm_before.end(), t.data().begin(), t.data().end());
    });

    auto cfg = cfg_for("align", 50, 3e-4, 8);
    cfg.max_samples = 8; // fixed full batch of 8 caption samples
    auto res = stage1_align(model, shared_data(), cfg);
    REQUIRE(res.losses.size() == 50);
    for (size_t i = 1; i < res.losses.size(); ++i) CHECK(res.losses[i] < res.losses[i - 1]);

    std::vector<double> enc_after, lm_after;
    model.encoder.visit_params("", [&](const std::string&, Tensor& t) {
        enc_after.insert(enc_after.end(), t.data().begin(), t.data().end());
    });
    model.lm.visit_params("", [&](const std::string&, Tensor& t) {
        lm_after.insert(lm_after.end(), t.data().begin(), t.data().end());
    });
    CHECK(std::memcmp(enc_before.data(), enc_after.data(), enc_before.size() * 8) == 0);
    CHECK(std::memcmp(lm_before.data(), lm_after.data(), lm_before.size() * 8) == 0);

    auto bad = cfg_for("pretrain", 1, 1e-3, 4);
    CHECK_THROWS_AS(stage1_align(model, shared_data(), bad), std::invalid_argument);
}

TEST_CASE("pretrain with lr=0 leaves parameters identical; same seed is bit-identical") {
    auto m1 = tiny_mm(4);
    auto before = bytes_of(m1);
    auto cfg0 = cfg_for("pretrain", 3, 0.0, 4);
    stage1_pretrain(m1, shared_data(), cfg0);
    auto after = bytes_of(m1);
    CHECK(std::memcmp(before.data(), after.data(), before.size() * 8) == 0);

    auto m2 = tiny_mm(4);
    auto m3 = tiny_mm(4);
    auto cfg = cfg_for("pretrain", 5, 1e-3, 4);
    auto r2 = stage1_pretrain(m2, shared_data(), cfg);
    auto r3 = stage1_pretrain(m3, shared_data(), cfg);
    CHECK(std::memcmp(r2.losses.data(), r3.losses.data(), r2.losses.size() * 8) == 0);
    auto b2 = bytes_of(m2);
    auto b3 = bytes_of(m3);
    CHECK(std::memcmp(b2.data(), b3.data(), b2.size() * 8) == 0);
}

TEST_CASE("stage2 dpo: first-batch loss is ln 2, reference hash stable") {
    auto model = tiny_mm(6);
    auto cfg = cfg_for("posttrain", 3, 1e-4, 4);
    cfg.method = "dpo";
    auto snapshot = model.clone();
    const uint64_t ref_hash = snapshot.params_hash();
    std::vector<double> first_losses;
    auto res = stage2_posttrain(model, shared_data(), cfg, &snapshot);
    CHECK(std::fabs(res.losses[0] - std::log(2.0)) < 1e-6);
    CHECK(snapshot.params_hash() == ref_hash);
}

TEST_CASE("stage2 sft ignores rejected responses bit-for-bit") {
    auto run = [&](bool scramble) {
        Dataset d = build_dataset(tiny_manifest());
        if (scramble) {
            for (int idx : d.split_posttrain) {
                auto& s = d.samples[size_t(idx)];
                s.rejected_tokens = {60, 61, 62};
                s.rejected = "scrambled";
            }
        }
        auto model = tiny_mm(8);
        auto cfg = cfg_for("posttrain", 4, 1e-3, 4);
        cfg.method = "sft";
        stage2_posttrain(model, d, cfg);
        return bytes_of(model);
    };
    auto clean = run(false);
    auto scrambled = run(true);
    CHECK(std::memcmp(clean.data(), scrambled.data(), clean.size() * 8) == 0);
}

TEST_CASE("sample-id sequences are identical across methods (controlled comparison)") {
    auto ma = tiny_mm(9);
    auto mb = tiny_mm(9);
    auto cfg = cfg_for("posttrain", 4, 1e-4, 6, 123);
    cfg.method = "sft";
    auto ra = stage2_posttrain(ma, shared_data(), cfg);
    cfg.method = "dpo";
    auto rb = stage2_posttrain(mb, shared_data(), cfg);
    CHECK(ra.step_sample_ids == rb.step_sample_ids);
}

TEST_CASE("checkpoint round trip: forward preserved, truncation detected, unique names") {
    auto model = tiny_mm(10);
    const std::string dir = "test_tmp/ckpt1";
    fs::remove_all(dir);
    std::vector<StageRecord> prov{{"align", "", 1, 10, "abc"}, {"pretrain", "", 1, 20, "def"}};
    save_checkpoint(dir, model, prov, 1, 20);

    auto loaded = load_checkpoint(dir);
    CHECK(loaded.provenance.size() == 2);
    CHECK(loaded.provenance[1].stage == "pretrain");
    CHECK(loaded.step == 20);

    auto img = [] {
        Rng rng(3);
        Image im;
        im.h = im.w = 64;
        im.rgb.resize(size_t(64) * 64 * 3);
        for (auto& b : im.rgb) b = uint8_t(rng.next() % 256);
        return im;
    }();
    std::vector<int> q{1, 2, 3}, r{7, 6};
    NoGradGuard ng;
    const double a = model.response_logprob(img, q, r).scalar_value();
    const double b = loaded.model.response_logprob(img, q, r).scalar_value();
    CHECK(std::fabs(a - b) < 1e-12);

    // truncate params.bin -> integrity error, no partial load
    auto path = fs::path(dir) / "params.bin";
    const auto size = fs::file_size(path);
    fs::resize_file(path, size - 16);
    CHECK_THROWS_AS(load_checkpoint(dir), std::runtime_error);
}

TEST_CASE("training is resumable bit-exactly from a mid-run checkpoint") {
    const std::string dir = "test_tmp/resume";
    fs::remove_all(dir);

    // straight run: 10 steps
    auto m1 = tiny_mm(11);
    auto cfg = cfg_for("pretrain", 10, 1e-3, 4, 42);
    auto r1 = stage1_pretrain(m1, shared_data(), cfg);

    // same run again, but checkpoint the live state at step 5
    auto m2 = tiny_mm(11);
    bool saved = false;
    stage1_pretrain(m2, shared_data(), cfg, nullptr, 0,
                    [&](int64_t step, Adam& opt) {
                        if (step == 5) {
                            save_checkpoint(dir, m2, {}, cfg.seed, step, &opt);
                            saved = true;
                        }
                    });
    REQUIRE(saved);

    auto ck = load_checkpoint(dir);
    auto m3 = std::move(ck.model);
    m3.flags = {true, true, true};
    m3.apply_trainability();
    auto params = m3.trainable_params();
    Adam opt(params, {.lr = cfg.lr});
    restore_optimizer(opt, ck);
    auto r2b = stage1_pretrain(m3, shared_data(), cfg, &opt, ck.step);

    auto b1 = bytes_of(m1);
    auto b3 = bytes_of(m3);
    CHECK(std::memcmp(b1.data(), b3.data(), b1.size() * 8) == 0);
    REQUIRE(r2b.losses.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(r1.losses[size_t(5 + i)] == r2b.losses[size_t(i)]);
}

TEST_CASE("pivot_extract: bit-equal features, reuse variants, bad reuse rejected") {
    auto model = tiny_mm(12);
    std::vector<StageRecord> prov{{"posttrain", "dpo", 1, 5, "xyz"}};
    auto bundle = pivot_extract(model, 1, prov);
    CHECK(bundle.reuse == 1);
    CHECK(bundle.reused_dims == std::vector<int>{16, 32});
    CHECK(bundle.projector_params.size() == 2);
    CHECK(bundle.projector_params[0].second == model.projector.layers[0].w.data());

    auto b0 = pivot_extract(model, 0, prov);
    CHECK(b0.projector_params.empty());
    CHECK_THROWS_AS(pivot_extract(model, 3, prov), std::invalid_argument);

    const std::string dir = "test_tmp/bundle";
    fs::remove_all(dir);
    save_pivot_bundle(dir, bundle);
    auto loaded = load_pivot_bundle(dir);
    CHECK(loaded.reused_dims == bundle.reused_dims);
    const std::map<std::string, std::vector<double>> ea(loaded.encoder_params.begin(),
                                                        loaded.encoder_params.end());
    const std::map<std::string, std::vector<double>> eb(bundle.encoder_params.begin(),
                                                        bundle.encoder_params.end());
    CHECK(ea == eb);
    CHECK(loaded.provenance.size() == 1);

    // extracted encoder reproduces the source model's features exactly
    LmConfig fresh;
    fresh.embed_dim = 32;
    fresh.depth = 1;
    fresh.heads = 2;
    fresh.max_seq_len = 160;
    auto m3 = make_stage3_model(loaded, fresh, 1, 99, false);
    Rng rng(4);
    Image im;
    im.h = im.w = 64;
    im.rgb.resize(size_t(64) * 64 * 3);
    for (auto& b : im.rgb) b = uint8_t(rng.next() % 256);
    NoGradGuard ng;
    auto fa = model.encoder.encode(im);
    auto fb = m3.encoder.encode(im);
    CHECK(std::memcmp(fa.data().data(), fb.data().data(), fa.numel() * 8) == 0);
}

TEST_CASE("stage3: freeze chain honored; full_train unfreezes; 1+1 trains only new parts") {
    auto trained = tiny_mm(13);
    auto bundle = pivot_extract(trained, 1, {});
    LmConfig fresh;
    fresh.embed_dim = 32;
    fresh.depth = 1;
    fresh.heads = 2;
    fresh.max_seq_len = 160;

    auto m = make_stage3_model(bundle, fresh, 1, 7, false);
    REQUIRE(m.projector.layers.size() == 2);
    CHECK(m.projector.frozen == std::vector<bool>{true, false});

    auto enc_before = m.encoder.patch_proj.w.data();
    auto reused_before = m.projector.layers[0].w.data();
    auto added_before = m.projector.layers[1].w.data();

    auto cfg = cfg_for("stage3", 4, 1e-3, 4);
    stage3_finetune(m, shared_data(), cfg);

    CHECK(m.encoder.patch_proj.w.data() == enc_before);
    CHECK(m.projector.layers[0].w.data() == reused_before);
    CHECK(m.projector.layers[1].w.data() != added_before);

    auto m2 = make_stage3_model(bundle, fresh, 1, 7, true);
    auto enc2_before = m2.encoder.patch_proj.w.data();
    stage3_finetune(m2, shared_data(), cfg);
    CHECK(m2.encoder.patch_proj.w.data() != enc2_before);

    // reuse=2 output width 32 != fresh lm 32? it matches here; force a mismatch
    LmConfig wide = fresh;
    wide.embed_dim = 48;
    auto bundle2 = pivot_extract(trained, 2, {});
    CHECK_THROWS_AS(make_stage3_model(bundle2, wide, 0, 7, false), std::invalid_argument);
}
