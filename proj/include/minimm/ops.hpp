#pragma once

#include <span>
#include <vector>

#include "minimm/tensor.hpp"

// Differentiable operation set. All matrices are row-major rank-2 tensors;
// vectors are rank-1. Each op validates shapes, checks its output for
// non-finite values and registers a reverse-mode closure when gradients are
// enabled. Every op here passes the finite-difference verifier in
// grad_check.hpp; tests enforce that.

namespace minimm::ops {

Tensor add(const Tensor& a, const Tensor& b);      // same shape, or b rank-1 row-broadcast
Tensor sub(const Tensor& a, const Tensor& b);      // same broadcast rules as add
Tensor mul(const Tensor& a, const Tensor& b);      // elementwise, same shape
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor gelu(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);               // -softplus(-x), overflow-safe
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor softmax_rows(const Tensor& x);

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mean_rows(const Tensor& x);                 // [m x n] -> [n]
Tensor sum_list(const std::vector<Tensor>& xs);    // n-ary same-shape sum

// Mean over masked positions of -log softmax(logits[t])[targets[t]].
// mask[t] in {0,1}; positions with mask 0 contribute nothing to value or
// gradient; an all-zero mask yields value 0 and zero gradient.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets,
                             std::span<const int> mask);

// Sum over masked positions of log softmax(logits[t])[targets[t]].
Tensor masked_logprob_sum(const Tensor& logits, std::span<const int> targets,
                          std::span<const int> mask);

} // namespace minimm::ops
