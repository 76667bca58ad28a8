#include "minimm/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace minimm {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() { step(cfg_.lr); }

void Adam::step(double lr) {
    for (auto& p : params_) {
        if (!p.has_grad())
            throw std::runtime_error("adam: step on empty gradient buffers");
    }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_count_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& val = params_[i].data();
        const auto& g = params_[i].grad_view();
        auto& m = m_[i];
        auto& v = v_[i];
        const long n = long(val.size());
#pragma omp parallel for schedule(static) if (n >= (1L << 15))
        for (long j = 0; j < n; ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            val[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

} // namespace minimm
