#pragma once

#include <functional>
#include <string>
#include <vector>

#include "minimm/tensor.hpp"

namespace minimm {

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    size_t coords_checked = 0;
    std::string worst; // "param 3 elem 17" for the largest error
};

// Compares reverse-mode gradients of a scalar-valued function against central
// finite differences at sampled coordinates of the given parameters.
//
// f must rebuild its value from the parameters' current contents on every
// call and be deterministic; nondeterminism is detected by evaluating twice
// and throws. samples_per_tensor <= 0 checks every coordinate.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& wrt,
                           int samples_per_tensor, double tol, uint64_t seed,
                           double h = 1e-4);

} // namespace minimm
