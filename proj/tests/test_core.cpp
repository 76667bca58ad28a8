#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "minimm/adam.hpp"
#include "minimm/grad_check.hpp"
#include "minimm/kernels.hpp"
#include "minimm/ops.hpp"
#include "minimm/rng.hpp"
#include "minimm/tensor.hpp"

using namespace minimm;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng, double s = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * s;
    return v;
}

Tensor random_tensor(Shape shape, uint64_t seed, bool rg = false, double s = 1.0) {
    Rng rng(seed);
    return Tensor::from_vector(shape, random_vec(shape_numel(shape), rng, s), rg);
}

} // namespace

TEST_CASE("parallel kernels match serial reference bit for bit") {
    Rng rng(7);
    const int m = 37, k = 29, n = 53;
    auto a = random_vec(size_t(m) * k, rng);
    auto b = random_vec(size_t(k) * n, rng);
    auto bt = random_vec(size_t(n) * k, rng);
    auto at = random_vec(size_t(k) * m, rng);

    std::vector<double> c1(size_t(m) * n, 1.0), c2(size_t(m) * n, 1.0);
    kern::gemm_nn(m, k, n, a.data(), b.data(), c1.data(), false);
    kern::ref::gemm_nn(m, k, n, a.data(), b.data(), c2.data(), false);
    CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * 8) == 0);

    kern::gemm_nt(m, k, n, a.data(), bt.data(), c1.data(), true);
    kern::ref::gemm_nt(m, k, n, a.data(), bt.data(), c2.data(), true);
    CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * 8) == 0);

    kern::gemm_tn(m, k, n, at.data(), b.data(), c1.data(), true);
    kern::ref::gemm_tn(m, k, n, at.data(), b.data(), c2.data(), true);
    CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * 8) == 0);

    const int rows = 41, cols = 19;
    auto x = random_vec(size_t(rows) * cols, rng);
    std::vector<double> y1(x.size()), y2(x.size());
    kern::softmax_rows(x.data(), y1.data(), rows, cols);
    kern::ref::softmax_rows(x.data(), y2.data(), rows, cols);
    CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * 8) == 0);

    auto gain = random_vec(cols, rng);
    auto bias = random_vec(cols, rng);
    std::vector<double> mean1(rows), rstd1(rows), mean2(rows), rstd2(rows);
    kern::layer_norm_rows(x.data(), gain.data(), bias.data(), y1.data(), mean1.data(),
                          rstd1.data(), rows, cols, 1e-5);
    kern::ref::layer_norm_rows(x.data(), gain.data(), bias.data(), y2.data(), mean2.data(),
                               rstd2.data(), rows, cols, 1e-5);
    CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * 8) == 0);

    std::vector<double> g1(x.size()), g2(x.size());
    kern::gelu(x.data(), g1.data(), x.size());
    kern::ref::gelu(x.data(), g2.data(), x.size());
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * 8) == 0);
}

TEST_CASE("matmul identity and fixed product") {
    auto i2 = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
    auto r = ops::matmul(i2, m);
    CHECK(r.data() == std::vector<double>{1, 2, 3, 4});

    auto b = Tensor::from_vector({2, 1}, {5, 6});
    auto p = ops::matmul(m, b);
    CHECK(p.data() == std::vector<double>{17, 39});

    CHECK_THROWS_AS(ops::matmul(m, Tensor::zeros({3, 2})), std::invalid_argument);
}

TEST_CASE("matmul gradient vs central differences") {
    auto a = random_tensor({4, 5}, 11, true);
    auto b = random_tensor({5, 3}, 12, true);
    auto f = [&]() { return ops::sum_all(ops::gelu(ops::matmul(a, b))); };
    auto rep = grad_check(f, {a, b}, 0, 1e-6, 99);
    INFO(rep.worst, " err=", rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("log_sigmoid values and identity") {
    auto x = Tensor::from_vector({3}, {0.0, -1000.0, 1.0});
    auto y = ops::log_sigmoid(x);
    CHECK(y.value_at(0) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    CHECK(y.value_at(1) == doctest::Approx(-1000.0).epsilon(1e-9));
    CHECK(y.value_at(2) == doctest::Approx(-std::log1p(std::exp(-1.0))).epsilon(1e-12));

    // log sigma(x) - log sigma(-x) == x
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const double v = rng.normal() * 10.0;
        auto t = Tensor::from_vector({1}, {v});
        auto tm = Tensor::from_vector({1}, {-v});
        const double lhs = ops::log_sigmoid(t).value_at(0) - ops::log_sigmoid(tm).value_at(0);
        CHECK(std::fabs(lhs - v) < 1e-10);
    }
}

TEST_CASE("softmax_cross_entropy uniform, empty mask, gradient") {
    const int t = 3, v = 16;
    auto logits = Tensor::zeros({t, v}, true);
    std::vector<int> targets{1, 5, 9};
    std::vector<int> mask{1, 1, 1};
    auto loss = ops::softmax_cross_entropy(logits, targets, mask);
    CHECK(loss.scalar_value() == doctest::Approx(std::log(16.0)).epsilon(1e-12));

    std::vector<int> mask0{0, 0, 0};
    auto loss0 = ops::softmax_cross_entropy(logits, targets, mask0);
    CHECK(loss0.scalar_value() == 0.0);
    logits.zero_grad();
    backward(loss0);
    for (double g : logits.grad_view()) CHECK(g == 0.0);

    auto rnd = random_tensor({4, 7}, 21, true);
    std::vector<int> tg{6, 0, 3, 2};
    std::vector<int> mk{1, 0, 1, 1};
    auto f = [&]() { return ops::softmax_cross_entropy(rnd, tg, mk); };
    auto rep = grad_check(f, {rnd}, 0, 1e-6, 17);
    CHECK(rep.pass);

    std::vector<int> bad{99, 0, 0, 0};
    CHECK_THROWS_AS(ops::softmax_cross_entropy(rnd, bad, mk), std::invalid_argument);
}

TEST_CASE("backward basics: sum -> ones, zero-scale -> zeros, non-scalar rejected") {
    auto x = random_tensor({3, 4}, 5, true);
    x.zero_grad();
    backward(ops::sum_all(x));
    for (double g : x.grad_view()) CHECK(g == 1.0);

    x.zero_grad();
    backward(ops::sum_all(ops::scale(x, 0.0)));
    for (double g : x.grad_view()) CHECK(g == 0.0);

    CHECK_THROWS_AS(backward(x), std::invalid_argument);
}

TEST_CASE("backward visits shared subexpressions once (diamond graph)") {
    auto x = Tensor::from_vector({1}, {3.0}, true);
    auto y = ops::mul(x, x);           // x^2
    auto z = ops::add(y, x);           // x^2 + x
    x.zero_grad();
    backward(z);
    CHECK(x.grad_view()[0] == doctest::Approx(2.0 * 3.0 + 1.0).epsilon(1e-14));
    CHECK(graph_size(z) == 3);
}

TEST_CASE("backward is linear in the loss") {
    auto w = random_tensor({4, 4}, 31, true);
    auto x = random_tensor({4, 4}, 32);
    auto run = [&](double a, double b) {
        w.zero_grad();
        auto l1 = ops::mean_all(ops::gelu(ops::matmul(w, x)));
        auto l2 = ops::sum_all(ops::mul(w, w));
        backward(ops::add(ops::scale(l1, a), ops::scale(l2, b)));
        return w.grad_view();
    };
    auto ga = run(1.0, 0.0);
    auto gb = run(0.0, 1.0);
    auto gc = run(2.5, -1.25);
    for (size_t i = 0; i < gc.size(); ++i)
        CHECK(std::fabs(gc[i] - (2.5 * ga[i] - 1.25 * gb[i])) < 1e-10);
}

TEST_CASE("gradients do not flow into requires_grad=false inputs") {
    auto w = random_tensor({3, 3}, 41, true);
    auto c = random_tensor({3, 3}, 42, false);
    w.zero_grad();
    backward(ops::sum_all(ops::mul(w, c)));
    CHECK(!c.has_grad());
    for (size_t i = 0; i < 9; ++i)
        CHECK(w.grad_view()[i] == doctest::Approx(c.value_at(i)).epsilon(1e-14));
}

TEST_CASE("no-grad mode records nothing") {
    auto w = random_tensor({3, 3}, 51, true);
    NoGradGuard ng;
    auto y = ops::matmul(w, w);
    CHECK(!y.requires_grad());
    CHECK(graph_size(y) == 1);
}

TEST_CASE("every op passes grad_check on randomized inputs, 5 seeds") {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        auto a = random_tensor({4, 6}, seed * 100 + 1, true);
        auto b = random_tensor({4, 6}, seed * 100 + 2, true);
        auto w = random_tensor({6, 5}, seed * 100 + 3, true);
        auto g = random_tensor({6}, seed * 100 + 4, true, 0.5);
        auto bias = random_tensor({6}, seed * 100 + 5, true, 0.5);
        auto table = random_tensor({9, 4}, seed * 100 + 6, true);
        std::vector<int> ids{1, 4, 4, 0, 8};

        auto check = [&](const std::string& name, std::function<Tensor()> f,
                         std::vector<Tensor> wrt, double tol = 1e-4) {
            auto rep = grad_check(f, wrt, 0, tol, seed * 7 + 3);
            INFO(name, " seed=", seed, " err=", rep.max_rel_err, " at ", rep.worst);
            CHECK(rep.pass);
        };

        check("add", [&] { return ops::sum_all(ops::gelu(ops::add(a, b))); }, {a, b});
        check("add_broadcast", [&] { return ops::sum_all(ops::gelu(ops::add(a, g))); }, {a, g});
        check("sub", [&] { return ops::sum_all(ops::gelu(ops::sub(a, b))); }, {a, b});
        check("mul", [&] { return ops::sum_all(ops::gelu(ops::mul(a, b))); }, {a, b});
        check("scale", [&] { return ops::sum_all(ops::scale(a, -1.7)); }, {a});
        check("matmul", [&] { return ops::mean_all(ops::matmul(a, w)); }, {a, w});
        check("transpose", [&] { return ops::sum_all(ops::gelu(ops::transpose(a))); }, {a});
        check("gelu", [&] { return ops::sum_all(ops::gelu(a)); }, {a});
        check("log_sigmoid", [&] { return ops::sum_all(ops::log_sigmoid(a)); }, {a});
        check("layer_norm", [&] { return ops::sum_all(ops::gelu(ops::layer_norm(a, g, bias))); },
              {a, g, bias});
        check("softmax_rows", [&] { return ops::sum_all(ops::gelu(ops::softmax_rows(a))); }, {a});
        check("embedding_lookup",
              [&] { return ops::mean_all(ops::gelu(ops::embedding_lookup(table, ids))); },
              {table});
        check("slice_rows", [&] { return ops::sum_all(ops::slice_rows(a, 1, 3)); }, {a});
        check("slice_cols", [&] { return ops::sum_all(ops::gelu(ops::slice_cols(a, 2, 5))); }, {a});
        check("concat_rows", [&] { return ops::sum_all(ops::gelu(ops::concat_rows(a, b))); },
              {a, b});
        check("concat_cols", [&] { return ops::sum_all(ops::gelu(ops::concat_cols(a, b))); },
              {a, b});
        check("mean_rows", [&] { return ops::sum_all(ops::gelu(ops::mean_rows(a))); }, {a});
        check("sum_list", [&] { return ops::sum_all(ops::sum_list({a, b, a})); }, {a, b});
        check("masked_logprob_sum", [&] {
            std::vector<int> tg{0, 3, 1, 4};
            std::vector<int> mk{1, 1, 0, 1};
            return ops::masked_logprob_sum(ops::matmul(a, w), tg, mk);
        }, {a, w});
    }
}

TEST_CASE("finite-difference check is exact for linear maps") {
    auto a = random_tensor({5, 5}, 77, true);
    auto rep = grad_check([&] { return ops::sum_all(ops::scale(a, 3.0)); }, {a}, 0, 1e-9, 5);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-9);
}

TEST_CASE("grad_check rejects nondeterministic functions") {
    int calls = 0;
    auto a = random_tensor({2, 2}, 88, true);
    auto f = [&]() {
        ++calls;
        return ops::sum_all(ops::scale(a, double(calls)));
    };
    CHECK_THROWS_AS(grad_check(f, {a}, 0, 1e-6, 1), std::runtime_error);
}

TEST_CASE("non-finite op outputs are an error") {
    auto big = Tensor::full({2}, 1e308);
    CHECK_THROWS_AS(ops::mul(big, big), std::runtime_error);
}

TEST_CASE("determinism: identical seeds give bit-identical forwards and gradients") {
    auto run = [](uint64_t seed) {
        auto a = random_tensor({6, 6}, seed, true);
        auto w = random_tensor({6, 6}, seed + 1, true);
        auto loss = ops::mean_all(ops::gelu(ops::matmul(a, w)));
        a.zero_grad();
        w.zero_grad();
        backward(loss);
        std::vector<double> out{loss.scalar_value()};
        out.insert(out.end(), a.grad_view().begin(), a.grad_view().end());
        out.insert(out.end(), w.grad_view().begin(), w.grad_view().end());
        return out;
    };
    auto r1 = run(123), r2 = run(123);
    CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * 8) == 0);
}

TEST_CASE("adam: first-step magnitude, zero grad, quadratic descent") {
    auto p = Tensor::from_vector({3}, {1.0, -2.0, 0.5}, true);
    Adam opt({p}, {.lr = 0.1});
    p.zero_grad();
    p.grad() = {0.3, -4.0, 1e-3};
    auto before = p.data();
    opt.step();
    for (int i = 0; i < 3; ++i)
        CHECK(std::fabs(std::fabs(p.data()[i] - before[i]) - 0.1) < 1e-6);

    // zero gradient leaves parameters unchanged
    auto q = Tensor::from_vector({2}, {1.0, 2.0}, true);
    Adam opt2({q}, {.lr = 0.1});
    q.zero_grad();
    auto qb = q.data();
    opt2.step();
    CHECK(q.data() == qb);

    // minimize f(x) = x^2 from x=1
    auto x = Tensor::from_vector({1}, {1.0}, true);
    Adam opt3({x}, {.lr = 0.1});
    for (int i = 0; i < 200; ++i) {
        x.zero_grad();
        backward(ops::mul(x, x));
        opt3.step();
    }
    CHECK(std::fabs(x.data()[0]) < 0.01);

    auto r = Tensor::from_vector({2}, {1.0, 1.0}, true);
    Adam opt4({r}, {});
    CHECK_THROWS_AS(opt4.step(), std::runtime_error);
}
