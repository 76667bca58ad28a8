#include "minimm/grad_check.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace minimm {

namespace {

double eval_value(const std::function<Tensor()>& f) {
    NoGradGuard ng;
    Tensor out = f();
    if (out.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
    return out.scalar_value();
}

} // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& wrt,
                           int samples_per_tensor, double tol, uint64_t seed, double h) {
    const double v1 = eval_value(f);
    const double v2 = eval_value(f);
    if (std::memcmp(&v1, &v2, sizeof(double)) != 0)
        throw std::runtime_error("grad_check: f is nondeterministic (double evaluation differs)");

    // analytic pass
    std::vector<Tensor> params = wrt;
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tensor loss = f();
    if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad_view());

    GradCheckReport rep;
    Rng rng(seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].data();
        const size_t n = vals.size();
        std::vector<size_t> coords;
        if (samples_per_tensor <= 0 || size_t(samples_per_tensor) >= n) {
            coords.resize(n);
            for (size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            coords.reserve(size_t(samples_per_tensor));
            for (int i = 0; i < samples_per_tensor; ++i)
                coords.push_back(size_t(rng.next() % n));
        }
        for (size_t c : coords) {
            const double orig = vals[c];
            vals[c] = orig + h;
            const double fp = eval_value(f);
            vals[c] = orig - h;
            const double fm = eval_value(f);
            vals[c] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[pi][c];
            const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-6});
            const double err = std::fabs(an - fd) / denom;
            ++rep.coords_checked;
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst = "param " + std::to_string(pi) + " elem " + std::to_string(c);
            }
        }
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

} // namespace minimm
