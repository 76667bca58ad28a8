#pragma once

#include <cstddef>

// Dense row-major kernels. The default entry points parallelize over output
// rows with OpenMP; every output element is produced by the same scalar loop
// as the serial reference in kern::ref, so results are bit-identical to the
// reference for any thread count. Tests assert this, and tools/bench_kernels
// compares the two.

namespace minimm::kern {

// C (m x n) = A (m x k) * B (k x n); += when accumulate
void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);
// C (m x n) = A (m x k) * B(n x k)^T
void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);
// C (m x n) = A (k x m)^T * B (k x n)
void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);

void add(const double* a, const double* b, double* y, size_t n);
void mul(const double* a, const double* b, double* y, size_t n);
void scale(const double* a, double s, double* y, size_t n);
// y += s * x
void axpy(const double* x, double s, double* y, size_t n);

void gelu(const double* x, double* y, size_t n);
// gx += gy * gelu'(x)
void gelu_grad(const double* x, const double* gy, double* gx, size_t n);

void softmax_rows(const double* x, double* y, int rows, int cols);
// gx += jacobian(softmax)^T gy, given forward output y
void softmax_rows_grad(const double* y, const double* gy, double* gx, int rows, int cols);

// y = (x - mean) * rstd * gain + bias per row; mean/rstd written out for backward
void layer_norm_rows(const double* x, const double* gain, const double* bias,
                     double* y, double* mean, double* rstd, int rows, int cols, double eps);
void layer_norm_rows_grad(const double* x, const double* gain, const double* mean,
                          const double* rstd, const double* gy,
                          double* gx, double* ggain, double* gbias, int rows, int cols);

namespace ref {
void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);
void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);
void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);
void add(const double* a, const double* b, double* y, size_t n);
void mul(const double* a, const double* b, double* y, size_t n);
void scale(const double* a, double s, double* y, size_t n);
void axpy(const double* x, double s, double* y, size_t n);
void gelu(const double* x, double* y, size_t n);
void gelu_grad(const double* x, const double* gy, double* gx, size_t n);
void softmax_rows(const double* x, double* y, int rows, int cols);
void softmax_rows_grad(const double* y, const double* gy, double* gx, int rows, int cols);
void layer_norm_rows(const double* x, const double* gain, const double* bias,
                     double* y, double* mean, double* rstd, int rows, int cols, double eps);
void layer_norm_rows_grad(const double* x, const double* gain, const double* mean,
                          const double* rstd, const double* gy,
                          double* gx, double* ggain, double* gbias, int rows, int cols);
} // namespace ref

} // namespace minimm::kern
