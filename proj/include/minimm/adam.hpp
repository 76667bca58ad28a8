#pragma once

#include <cstdint>
#include <vector>

#include "minimm/tensor.hpp"

namespace minimm {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction over a fixed parameter list. Moment buffers are
// owned here and are serialized with checkpoints so runs can resume exactly.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    // Applies one update from the parameters' current grad buffers; gradients
    // themselves are left untouched. Throws if a parameter has no grad buffer.
    void step();
    void step(double lr_override);

    void zero_grad();

    int64_t steps_taken() const { return step_count_; }
    void set_steps_taken(int64_t n) { step_count_ = n; }

    const std::vector<Tensor>& params() const { return params_; }
    std::vector<double>& moment1(size_t i) { return m_[i]; }
    std::vector<double>& moment2(size_t i) { return v_[i]; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int64_t step_count_ = 0;
};

} // namespace minimm
