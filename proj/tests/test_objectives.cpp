#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "minimm/adam.hpp"
#include "minimm/grad_check.hpp"
#include "minimm/objectives.hpp"
#include "minimm/tokenizer.hpp"

using namespace minimm;

namespace {

Image random_image(int size, uint64_t seed) {
    Rng rng(seed);
    Image img;
    img.h = img.w = size;
    img.rgb.resize(size_t(size) * size * 3);
    for (auto& b : img.rgb) b = uint8_t(rng.next() % 256);
    return img;
}

MultimodalModel tiny_model(uint64_t seed, int vocab = 0) {
    VisionEncoderConfig enc;
    enc.image_size = 16;
    enc.patch_size = 8;
    enc.embed_dim = 16;
    enc.depth = 1;
    enc.heads = 2;
    LmConfig lm;
    lm.vocab_size = vocab;
    lm.embed_dim = 32;
    lm.depth = 1;
    lm.heads = 2;
    lm.max_seq_len = 96;
    return MultimodalModel(enc, ProjectorConfig{}, lm, seed);
}

Sample make_sample(uint64_t seed, std::vector<int> q, std::vector<int> yc, std::vector<int> yr) {
    Sample s;
    s.id = int(seed);
    s.image = random_image(16, seed);
    s.q_tokens = std::move(q);
    s.chosen_tokens = std::move(yc);
    s.rejected_tokens = std::move(yr);
    return s;
}

std::vector<Sample> tiny_batch(int n) {
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i)
        out.push_back(make_sample(uint64_t(100 + i), {7, 8, int(9 + i % 3)},
                                  {20, int(21 + i % 4)}, {30, int(31 + i % 4)}));
    return out;
}

std::vector<const Sample*> ptrs(const std::vector<Sample>& v) {
    std::vector<const Sample*> p;
    for (const auto& s : v) p.push_back(&s);
    return p;
}

} // namespace

TEST_CASE("sft_loss: uniform model value, rejected responses never read") {
    auto m = tiny_model(1, 64);
    std::fill(m.lm.head.w.data().begin(), m.lm.head.w.data().end(), 0.0);
    std::fill(m.lm.head.b.data().begin(), m.lm.head.b.data().end(), 0.0);
    auto batch = tiny_batch(4);
    auto loss = sft_loss(m, ptrs(batch));
    CHECK(loss.scalar_value() == doctest::Approx(std::log(64.0)).epsilon(1e-12));

    // scrambling y^r leaves the loss (and gradients) bit-identical
    auto m2 = tiny_model(2);
    auto batch2 = tiny_batch(4);
    auto l1 = sft_loss(m2, ptrs(batch2));
    m2.apply_trainability();
    auto params = m2.trainable_params();
    for (auto& p : params) p.zero_grad();
    backward(l1);
    std::vector<double> g1;
    for (auto& p : params) g1.insert(g1.end(), p.grad_view().begin(), p.grad_view().end());

    for (auto& s : batch2) s.rejected_tokens = {63, 62, 61};
    auto l2 = sft_loss(m2, ptrs(batch2));
    for (auto& p : params) p.zero_grad();
    backward(l2);
    std::vector<double> g2;
    for (auto& p : params) g2.insert(g2.end(), p.grad_view().begin(), p.grad_view().end());

    CHECK(l1.scalar_value() == l2.scalar_value());
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * 8) == 0);

    CHECK_THROWS_AS(sft_loss(m2, {}), std::invalid_argument);
}

TEST_CASE("sft_loss equals the mean of per-sample normalized response scores") {
    auto m = tiny_model(3);
    auto batch = tiny_batch(2);
    NoGradGuard ng;
    auto loss = sft_loss(m, ptrs(batch));
    double manual = 0.0;
    for (const auto& s : batch) {
        const auto q = model_query(s);
        const auto r = model_response(s.chosen_tokens);
        const double lp = m.response_logprob(s.image, q, r).scalar_value();
        manual += -lp / double(r.size());
    }
    manual /= double(batch.size());
    CHECK(loss.scalar_value() == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("dpo_loss identities: fresh reference gives ln 2, beta=0 gives ln 2") {
    auto policy = tiny_model(4);
    auto reference = policy.clone();
    auto batch = tiny_batch(5);
    auto loss = dpo_loss(policy, reference, ptrs(batch), 0.1);
    CHECK(loss.scalar_value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(std::fabs(loss.scalar_value() - std::log(2.0)) < 1e-9);

    // beta = 0 regardless of model state
    auto other = tiny_model(5);
    auto loss0 = dpo_loss(other, reference, ptrs(batch), 0.0);
    CHECK(loss0.scalar_value() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    CHECK_THROWS_AS(dpo_loss(policy, reference, ptrs(batch), -0.5), std::invalid_argument);
    auto mismatched = tiny_model(6, 32);
    CHECK_THROWS_AS(dpo_loss(policy, mismatched, ptrs(batch), 0.1), std::invalid_argument);
}

TEST_CASE("dpo scalar stub: closed-form value and exact-opposite gradient signs") {
    // delta_c = 1.0, delta_r = -1.0, beta = 0.5 -> -log sigmoid(1.0)
    auto lc = Tensor::scalar(1.0, true);
    auto lr = Tensor::scalar(-1.0, true);
    const double rc = 0.0, rr = 0.0;
    auto z = ops::scale(ops::sub(ops::sub(lc, lr), Tensor::scalar(rc - rr)), 0.5);
    auto loss = ops::neg(ops::log_sigmoid(z));
    CHECK(loss.scalar_value() == doctest::Approx(0.31326168751822286).epsilon(1e-12));

    lc.zero_grad();
    lr.zero_grad();
    backward(loss);
    const double gc = lc.grad_view()[0];
    const double gr = lr.grad_view()[0];
    const double zval = 0.5 * 2.0;
    const double expect = -0.5 * (1.0 / (1.0 + std::exp(zval)));
    CHECK(gc == doctest::Approx(expect).epsilon(1e-12));
    CHECK(gc < 0.0);
    CHECK(gr > 0.0);
    CHECK(gc == -gr); // bitwise opposite by construction
}

TEST_CASE("reference parameters stay bit-identical through dpo training cycles") {
    auto policy = tiny_model(7);
    auto reference = policy.clone();
    const uint64_t ref_hash = reference.params_hash();
    auto batch = tiny_batch(3);
    policy.apply_trainability();
    Adam opt(policy.trainable_params(), {.lr = 5e-3});
    for (int i = 0; i < 4; ++i) {
        auto loss = dpo_loss(policy, reference, ptrs(batch), 0.1);
        opt.zero_grad();
        backward(loss);
        opt.step();
    }
    CHECK(reference.params_hash() == ref_hash);
    CHECK(policy.params_hash() != ref_hash);
}

TEST_CASE("both losses are invariant to batch order") {
    auto policy = tiny_model(8);
    auto reference = tiny_model(9); // different params: nontrivial dpo values
    auto batch = tiny_batch(6);
    auto p = ptrs(batch);
    std::vector<const Sample*> rev(p.rbegin(), p.rend());
    NoGradGuard ng;
    CHECK(std::fabs(sft_loss(policy, p).scalar_value() -
                    sft_loss(policy, rev).scalar_value()) < 1e-10);
    CHECK(std::fabs(dpo_loss(policy, reference, p, 0.1).scalar_value() -
                    dpo_loss(policy, reference, rev, 0.1).scalar_value()) < 1e-10);
}

TEST_CASE("dpo_stats: ties at reference, margin linear in beta, overfit accuracy") {
    auto policy = tiny_model(10);
    auto reference = policy.clone();
    auto batch = tiny_batch(4);
    auto st = dpo_stats(policy, reference, ptrs(batch), 0.1);
    CHECK(st.margin_mean == 0.0);
    CHECK(st.implicit_reward_acc == 0.5);

    auto other = tiny_model(11);
    auto s1 = dpo_stats(other, reference, ptrs(batch), 0.1);
    auto s2 = dpo_stats(other, reference, ptrs(batch), 0.2);
    CHECK(s2.margin_mean == doctest::Approx(2.0 * s1.margin_mean).epsilon(1e-12));

    // a few dpo steps on a fixed batch drive implicit-reward accuracy to 1
    policy.apply_trainability();
    Adam opt(policy.trainable_params(), {.lr = 1e-2});
    for (int i = 0; i < 40; ++i) {
        auto loss = dpo_loss(policy, reference, ptrs(batch), 0.5);
        opt.zero_grad();
        backward(loss);
        opt.step();
    }
    auto after = dpo_stats(policy, reference, ptrs(batch), 0.5);
    CHECK(after.implicit_reward_acc == 1.0);
    CHECK(after.margin_mean > 0.0);
}

TEST_CASE("dpo gradients match finite differences end to end") {
    auto policy = tiny_model(12);
    auto reference = tiny_model(13);
    auto batch = tiny_batch(2);
    auto p = ptrs(batch);
    auto f = [&]() { return dpo_loss(policy, reference, p, 0.3); };
    std::vector<Tensor> wrt{policy.lm.head.w, policy.projector.layers[0].w,
                            policy.encoder.patch_proj.w, policy.lm.tok_embed};
    auto rep = grad_check(f, wrt, 20, 1e-4, 3);
    INFO("worst ", rep.worst, " err ", rep.max_rel_err);
    CHECK(rep.pass);
}
