#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "minimm/adam.hpp"
#include "minimm/eval.hpp"
#include "minimm/objectives.hpp"
#include "minimm/pipeline.hpp"
#include "minimm/tokenizer.hpp"

using namespace minimm;

namespace {

FeatureMatrix make_features(int n, int d, std::vector<double> values,
                            const std::string& tag = "raw") {
    FeatureMatrix f;
    f.n = n;
    f.d = d;
    f.values = std::move(values);
    f.source = tag;
    for (int i = 0; i < n; ++i) f.sample_ids.push_back(i);
    return f;
}

FeatureMatrix gaussian_features(int n, int d, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(n) * d);
    for (auto& x : v) x = rng.normal();
    return make_features(n, d, std::move(v));
}

MultimodalModel tiny_model(uint64_t seed) {
    VisionEncoderConfig enc;
    enc.image_size = 64;
    enc.patch_size = 16;
    enc.embed_dim = 16;
    enc.depth = 1;
    enc.heads = 2;
    LmConfig lm;
    lm.embed_dim = 32;
    lm.depth = 1;
    lm.heads = 2;
    lm.max_seq_len = 128;
    return MultimodalModel(enc, ProjectorConfig{}, lm, seed);
}

DatasetManifest tiny_manifest() {
    DatasetManifest m;
    m.seed = 5;
    m.align_count = 4;
    m.pretrain_count = 8;
    m.posttrain_count = 16;
    m.eval_count = 24;
    m.probe_count = 12;
    m.patch_size = 16;
    return m;
}

} // namespace

TEST_CASE("linear probe: one-hot features perfect, constant features at chance") {
    const int n = 120, c = 4;
    std::vector<double> onehot(static_cast<size_t>(n) * c, 0.0);
    std::vector<int> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        labels[size_t(i)] = i % c;
        onehot[size_t(i) * c + size_t(i % c)] = 1.0;
    }
    for (const char* mode : {"prototype", "logistic"}) {
        LinearProbeConfig cfg;
        cfg.mode = mode;
        cfg.seed = 3;
        CHECK(linear_probe(make_features(n, c, onehot), labels, cfg) == 1.0);
    }

    // identical features for every sample -> chance, over 5 seeds
    std::vector<double> constant(static_cast<size_t>(n) * c, 0.7);
    for (const char* mode : {"prototype", "logistic"}) {
        double acc = 0.0;
        for (uint64_t s = 0; s < 5; ++s) {
            LinearProbeConfig cfg;
            cfg.mode = mode;
            cfg.seed = s;
            acc += linear_probe(make_features(n, c, constant), labels, cfg);
        }
        acc /= 5.0;
        CHECK(std::fabs(acc - 0.25) <= 0.05);
    }
}

TEST_CASE("linear probe: well-separated gaussian blobs are >= 0.99") {
    const int n = 200, d = 8;
    Rng rng(17);
    std::vector<double> v(static_cast<size_t>(n) * d);
    std::vector<int> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        labels[size_t(i)] = i % 2;
        for (int j = 0; j < d; ++j)
            v[size_t(i) * d + j] = rng.normal() + (i % 2 ? 10.0 : 0.0);
    }
    for (const char* mode : {"prototype", "logistic"}) {
        LinearProbeConfig cfg;
        cfg.mode = mode;
        cfg.seed = 1;
        CHECK(linear_probe(make_features(n, d, v), labels, cfg) >= 0.99);
    }

    std::vector<int> single(static_cast<size_t>(n), 1);
    LinearProbeConfig cfg;
    CHECK_THROWS_AS(linear_probe(make_features(n, d, v), single, cfg), std::invalid_argument);
}

TEST_CASE("segmentation probe: one-hot features -> recall 1, constant -> chance") {
    const int n = 4000, c = 5; // classes 0..4, 0 is background
    std::vector<double> onehot(static_cast<size_t>(n) * c, 0.0);
    std::vector<uint8_t> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        labels[size_t(i)] = uint8_t(i % c);
        onehot[size_t(i) * c + size_t(i % c)] = 1.0;
    }
    SegProbeConfig cfg;
    cfg.seeds = 2;
    cfg.epochs = 5;
    CHECK(segmentation_probe_features(make_features(n, c, onehot), labels, cfg) == 1.0);

    std::vector<double> constant(static_cast<size_t>(n) * c, 0.3);
    SegProbeConfig cfg6;
    cfg6.seeds = 6;
    const double recall =
        segmentation_probe_features(make_features(n, c, constant), labels, cfg6);
    // constant features predict one class; mean recall over the 4 non-background
    // classes is 1/4 if it predicts a foreground class, 0 if background
    CHECK(recall <= 0.25 + 0.05);

    std::vector<uint8_t> all_bg(static_cast<size_t>(n), 0);
    CHECK_THROWS_AS(segmentation_probe_features(make_features(n, c, constant), all_bg, cfg),
                    std::invalid_argument);
}

TEST_CASE("segmentation probe leaves the model untouched") {
    auto model = tiny_model(3);
    auto data = build_dataset(tiny_manifest());
    const uint64_t before = model.params_hash();
    SegProbeConfig cfg;
    cfg.seeds = 1;
    cfg.epochs = 1;
    const double recall = segmentation_probe(model, data, cfg);
    CHECK(model.params_hash() == before);
    CHECK(recall >= 0.0);
    CHECK(recall <= 1.0);
}

TEST_CASE("mutual-knn alignment: identity, rotation/scale invariance, random baseline") {
    auto a = gaussian_features(64, 6, 9);
    CHECK(mutual_knn_alignment(a, a, 5) == 1.0);

    // orthogonal rotation (Gram-Schmidt on a random matrix) + positive scale
    const int d = 6;
    Rng rng(21);
    std::vector<std::vector<double>> q(d, std::vector<double>(d));
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) q[size_t(i)][size_t(j)] = rng.normal();
        for (int k = 0; k < i; ++k) {
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += q[size_t(i)][size_t(j)] * q[size_t(k)][size_t(j)];
            for (int j = 0; j < d; ++j) q[size_t(i)][size_t(j)] -= dot * q[size_t(k)][size_t(j)];
        }
        double norm = 0.0;
        for (int j = 0; j < d; ++j) norm += q[size_t(i)][size_t(j)] * q[size_t(i)][size_t(j)];
        norm = std::sqrt(norm);
        for (int j = 0; j < d; ++j) q[size_t(i)][size_t(j)] /= norm;
    }
    FeatureMatrix b = a;
    for (int i = 0; i < a.n; ++i) {
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k) s += a.row(i)[k] * q[size_t(k)][size_t(j)];
            b.values[size_t(i) * d + j] = 3.7 * s;
        }
    }
    CHECK(mutual_knn_alignment(a, b, 5) == 1.0);

    // independent random features: expected overlap k/(n-1)
    const int n = 512, k = 8;
    double mean = 0.0;
    for (uint64_t s = 0; s < 5; ++s) {
        auto fa = gaussian_features(n, 16, 100 + s);
        auto fb = gaussian_features(n, 16, 200 + s);
        mean += mutual_knn_alignment(fa, fb, k);
    }
    mean /= 5.0;
    CHECK(std::fabs(mean - double(k) / double(n - 1)) <= 0.01);

    CHECK_THROWS_AS(mutual_knn_alignment(a, gaussian_features(63, 6, 1), 5),
                    std::invalid_argument);
    CHECK_THROWS_AS(mutual_knn_alignment(a, a, 64), std::invalid_argument);
}

TEST_CASE("alignment score is symmetric") {
    auto a = gaussian_features(48, 5, 31);
    auto b = gaussian_features(48, 9, 32);
    CHECK(mutual_knn_alignment(a, b, 4) == mutual_knn_alignment(b, a, 4));
}

TEST_CASE("attribution: zero projector -> zero map, shape, sft ignores rejected") {
    auto data = build_dataset(tiny_manifest());
    const auto& sample = data.samples[size_t(data.split_eval[0])];

    auto zeroed = tiny_model(4);
    for (auto& layer : zeroed.projector.layers) {
        std::fill(layer.w.data().begin(), layer.w.data().end(), 0.0);
        std::fill(layer.b.data().begin(), layer.b.data().end(), 0.0);
    }
    AttributionConfig cfg;
    cfg.train_steps = 0; // read at entry; projector stays zero
    auto map = grad_attribution(zeroed, sample, "sft", cfg);
    CHECK(map.grid == 4);
    CHECK(map.values.size() == 16);
    for (double v : map.values) CHECK(v == 0.0);

    // non-degenerate model: map normalized with max exactly 1, non-negative
    auto model = tiny_model(5);
    cfg.train_steps = 2;
    cfg.schedule_total = 10;
    auto m2 = grad_attribution(model, sample, "sft", cfg);
    double mx = 0.0;
    for (double v : m2.values) {
        CHECK(v >= 0.0);
        mx = std::max(mx, v);
    }
    CHECK(mx == 1.0);

    // sft maps do not depend on the rejected response
    Sample tweaked = sample;
    tweaked.rejected_tokens = {60, 61};
    auto m3 = grad_attribution(model, tweaked, "sft", cfg);
    CHECK(m2.values == m3.values);

    auto m4 = grad_attribution(model, sample, "dpo", cfg);
    CHECK(m4.values.size() == 16);

    Sample empty = sample;
    empty.chosen_tokens.clear();
    CHECK_THROWS_AS(grad_attribution(model, empty, "sft", cfg), std::invalid_argument);
    CHECK_THROWS_AS(grad_attribution(model, sample, "ppo", cfg), std::invalid_argument);
}

TEST_CASE("attribution cell mass sums correctly") {
    AttributionMap map;
    map.grid = 4;
    map.values.assign(16, 0.0);
    map.values[5] = 1.0; // row 1, col 1
    map.values[0] = 1.0;
    CHECK(attribution_cell_mass(map, 5, 4) == doctest::Approx(0.5));
    CHECK(attribution_cell_mass(map, 15, 4) == 0.0);
}

TEST_CASE("vqa_eval: hard-wired gold answers score 1.0 everywhere") {
    auto data = build_dataset(tiny_manifest());
    auto model = tiny_model(6);
    auto samples = split_samples(data, "eval", 0);

    VqaResult res = vqa_eval(model, samples, VqaConfig{24});
    CHECK(res.total == int(samples.size()));
    for (const auto& [dom, acc] : res.domain_accuracy) {
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
    }

    // overfit a single sample so greedy decode emits the gold answer, then
    // score exactly that sample
    std::vector<const Sample*> one{samples[0]};
    auto policy = tiny_model(7);
    policy.apply_trainability();
    Adam opt(policy.trainable_params(), {.lr = 5e-3});
    for (int i = 0; i < 120; ++i) {
        auto loss = sft_loss(policy, one);
        opt.zero_grad();
        backward(loss);
        opt.step();
        if (i > 60) {
            auto got = policy.greedy_decode(one[0]->image, model_query(*one[0]), 24);
            if (strip_think_spans(got) == strip_think_spans(one[0]->chosen_tokens)) break;
        }
    }
    auto res1 = vqa_eval(policy, one, VqaConfig{24});
    CHECK(res1.macro_accuracy == 1.0);
}

TEST_CASE("extract_features: determinism, dims per source, identical rows") {
    auto data = build_dataset(tiny_manifest());
    auto model = tiny_model(8);
    auto probe = split_samples(data, "probe", 6);
    auto f1 = extract_features(model, probe, "encoder");
    auto f2 = extract_features(model, probe, "encoder");
    CHECK(f1.values == f2.values);
    CHECK(f1.d == 16);
    auto fp = extract_features(model, probe, "projected");
    CHECK(fp.d == 32);
    CHECK_THROWS_AS(extract_features(model, probe, "latent"), std::invalid_argument);

    // duplicated image -> identical feature rows
    std::vector<const Sample*> dup{probe[0], probe[0]};
    auto fd = extract_features(model, dup, "encoder");
    for (int j = 0; j < fd.d; ++j) CHECK(fd.row(0)[j] == fd.row(1)[j]);
}

TEST_CASE("text tower features are deterministic and shaped by the lm width") {
    auto model = tiny_model(9);
    std::vector<std::vector<int>> seqs{{1, 7, 8}, {1, 9}, {2, 3, 4, 5}};
    auto f = text_tower_features(model.lm, seqs);
    CHECK(f.n == 3);
    CHECK(f.d == 32);
    auto g = text_tower_features(model.lm, seqs);
    CHECK(f.values == g.values);
}
