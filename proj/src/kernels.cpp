#include "minimm/kernels.hpp"

#include <cmath>

namespace minimm::kern {

namespace {

// Work threshold below which the OpenMP fork is not worth paying.
constexpr long kParallelWork = 1L << 15;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline void gemm_nn_row(int i, int k, int n, const double* a, const double* b,
                        double* c, bool acc) {
    double* crow = c + size_t(i) * size_t(n);
    if (!acc) {
        for (int j = 0; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = a + size_t(i) * size_t(k);
    for (int kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = b + size_t(kk) * size_t(n);
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline void gemm_nt_row(int i, int k, int n, const double* a, const double* b,
                        double* c, bool acc) {
    const double* arow = a + size_t(i) * size_t(k);
    double* crow = c + size_t(i) * size_t(n);
    for (int j = 0; j < n; ++j) {
        const double* brow = b + size_t(j) * size_t(k);
        double s = 0.0;
        for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
        crow[j] = acc ? crow[j] + s : s;
    }
}

// A is k x m; column i of A drives row i of C.
inline void gemm_tn_row(int i, int m, int k, int n, const double* a, const double* b,
                        double* c, bool acc) {
    double* crow = c + size_t(i) * size_t(n);
    if (!acc) {
        for (int j = 0; j < n; ++j) crow[j] = 0.0;
    }
    for (int kk = 0; kk < k; ++kk) {
        const double av = a[size_t(kk) * size_t(m) + size_t(i)];
        const double* brow = b + size_t(kk) * size_t(n);
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline double gelu_one(double x) {
    return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

inline double gelu_grad_one(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
           x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

inline void softmax_row(const double* x, double* y, int cols) {
    double mx = x[0];
    for (int j = 1; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
    double s = 0.0;
    for (int j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        s += y[j];
    }
    const double inv = 1.0 / s;
    for (int j = 0; j < cols; ++j) y[j] *= inv;
}

inline void softmax_grad_row(const double* y, const double* gy, double* gx, int cols) {
    double dot = 0.0;
    for (int j = 0; j < cols; ++j) dot += gy[j] * y[j];
    for (int j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
}

inline void layer_norm_row(const double* x, const double* gain, const double* bias,
                           double* y, double* mean, double* rstd, int cols, double eps) {
    double mu = 0.0;
    for (int j = 0; j < cols; ++j) mu += x[j];
    mu /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
        const double d = x[j] - mu;
        var += d * d;
    }
    var /= cols;
    const double rs = 1.0 / std::sqrt(var + eps);
    *mean = mu;
    *rstd = rs;
    for (int j = 0; j < cols; ++j) y[j] = (x[j] - mu) * rs * gain[j] + bias[j];
}

inline void layer_norm_grad_row(const double* x, const double* gain, double mean,
                                double rstd, const double* gy, double* gx, int cols) {
    double s1 = 0.0, s2 = 0.0;
    for (int j = 0; j < cols; ++j) {
        const double xhat = (x[j] - mean) * rstd;
        const double dxhat = gy[j] * gain[j];
        s1 += dxhat;
        s2 += dxhat * xhat;
    }
    s1 /= cols;
    s2 /= cols;
    for (int j = 0; j < cols; ++j) {
        const double xhat = (x[j] - mean) * rstd;
        const double dxhat = gy[j] * gain[j];
        gx[j] += rstd * (dxhat - s1 - xhat * s2);
    }
}

} // namespace

void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
    const long work = long(m) * long(k) * long(n);
#pragma omp parallel for schedule(static) if (work >= kParallelWork && m > 1)
    for (int i = 0; i < m; ++i) gemm_nn_row(i, k, n, a, b, c, accumulate);
}

void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
    const long work = long(m) * long(k) * long(n);
#pragma omp parallel for schedule(static) if (work >= kParallelWork && m > 1)
    for (int i = 0; i < m; ++i) gemm_nt_row(i, k, n, a, b, c, accumulate);
}

void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
    const long work = long(m) * long(k) * long(n);
#pragma omp parallel for schedule(static) if (work >= kParallelWork && m > 1)
    for (int i = 0; i < m; ++i) gemm_tn_row(i, m, k, n, a, b, c, accumulate);
}

void add(const double* a, const double* b, double* y, size_t n) {
    const long work = long(n);
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
    for (long i = 0; i < long(n); ++i) y[i] = a[i] + b[i];
}

void mul(const double* a, const double* b, double* y, size_t n) {
    const long work = long(n);
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
    for (long i = 0; i < long(n); ++i) y[i] = a[i] * b[i];
}

void scale(const double* a, double s, double* y, size_t n) {
    const long work = long(n);
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
    for (long i = 0; i < long(n); ++i) y[i] = a[i] * s;
}

void axpy(const double* x, double s, double* y, size_t n) {
    const long work = long(n);
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
    for (long i = 0; i < long(n); ++i) y[i] += s * x[i];
}

void gelu(const double* x, double* y, size_t n) {
    const long work = long(n) * 8;
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
    for (long i = 0; i < long(n); ++i) y[i] = gelu_one(x[i]);
}

void gelu_grad(const double* x, const double* gy, double* gx, size_t n) {
    const long work = long(n) * 8;
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
    for (long i = 0; i < long(n); ++i) gx[i] += gy[i] * gelu_grad_one(x[i]);
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
    const long work = long(rows) * long(cols) * 8;
#pragma omp parallel for schedule(static) if (work >= kParallelWork && rows > 1)
    for (int i = 0; i < rows; ++i)
        softmax_row(x + size_t(i) * cols, y + size_t(i) * cols, cols);
}

void softmax_rows_grad(const double* y, const double* gy, double* gx, int rows, int cols) {
    const long work = long(rows) * long(cols) * 4;
#pragma omp parallel for schedule(static) if (work >= kParallelWork && rows > 1)
    for (int i = 0; i < rows; ++i)
        softmax_grad_row(y + size_t(i) * cols, gy + size_t(i) * cols,
                         gx + size_t(i) * cols, cols);
}

void layer_norm_rows(const double* x, const double* gain, const double* bias,
                     double* y, double* mean, double* rstd, int rows, int cols, double eps) {
    const long work = long(rows) * long(cols) * 4;
#pragma omp parallel for schedule(static) if (work >= kParallelWork && rows > 1)
    for (int i = 0; i < rows; ++i)
        layer_norm_row(x + size_t(i) * cols, gain, bias, y + size_t(i) * cols,
                       mean + i, rstd + i, cols, eps);
}

void layer_norm_rows_grad(const double* x, const double* gain, const double* mean,
                          const double* rstd, const double* gy,
                          double* gx, double* ggain, double* gbias, int rows, int cols) {
    const long work = long(rows) * long(cols) * 6;
#pragma omp parallel for schedule(static) if (work >= kParallelWork && rows > 1)
    for (int i = 0; i < rows; ++i)
        layer_norm_grad_row(x + size_t(i) * cols, gain, mean[i], rstd[i],
                            gy + size_t(i) * cols, gx + size_t(i) * cols, cols);
    // gain/bias grads are column reductions; parallelize over columns so each
    // accumulator is owned by one thread and the summation order is fixed.
#pragma omp parallel for schedule(static) if (work >= kParallelWork && cols > 1)
    for (int j = 0; j < cols; ++j) {
        double gg = 0.0, gb = 0.0;
        for (int i = 0; i < rows; ++i) {
            const double xhat = (x[size_t(i) * cols + j] - mean[i]) * rstd[i];
            const double g = gy[size_t(i) * cols + j];
            gg += g * xhat;
            gb += g;
        }
        ggain[j] += gg;
        gbias[j] += gb;
    }
}

namespace ref {

void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
    for (int i = 0; i < m; ++i) gemm_nn_row(i, k, n, a, b, c, accumulate);
}
void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
    for (int i = 0; i < m; ++i) gemm_nt_row(i, k, n, a, b, c, accumulate);
}
void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
    for (int i = 0; i < m; ++i) gemm_tn_row(i, m, k, n, a, b, c, accumulate);
}
void add(const double* a, const double* b, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
void mul(const double* a, const double* b, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
void scale(const double* a, double s, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] * s;
}
void axpy(const double* x, double s, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += s * x[i];
}
void gelu(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}
void gelu_grad(const double* x, const double* gy, double* gx, size_t n) {
    for (size_t i = 0; i < n; ++i) gx[i] += gy[i] * gelu_grad_one(x[i]);
}
void softmax_rows(const double* x, double* y, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        softmax_row(x + size_t(i) * cols, y + size_t(i) * cols, cols);
}
void softmax_rows_grad(const double* y, const double* gy, double* gx, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        softmax_grad_row(y + size_t(i) * cols, gy + size_t(i) * cols,
                         gx + size_t(i) * cols, cols);
}
void layer_norm_rows(const double* x, const double* gain, const double* bias,
                     double* y, double* mean, double* rstd, int rows, int cols, double eps) {
    for (int i = 0; i < rows; ++i)
        layer_norm_row(x + size_t(i) * cols, gain, bias, y + size_t(i) * cols,
                       mean + i, rstd + i, cols, eps);
}
void layer_norm_rows_grad(const double* x, const double* gain, const double* mean,
                          const double* rstd, const double* gy,
                          double* gx, double* ggain, double* gbias, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        layer_norm_grad_row(x + size_t(i) * cols, gain, mean[i], rstd[i],
                            gy + size_t(i) * cols, gx + size_t(i) * cols, cols);
    for (int j = 0; j < cols; ++j) {
        double gg = 0.0, gb = 0.0;
        for (int i = 0; i < rows; ++i) {
            const double xhat = (x[size_t(i) * cols + j] - mean[i]) * rstd[i];
            const double g = gy[size_t(i) * cols + j];
            gg += g * xhat;
            gb += g;
        }
        ggain[j] += gg;
        gbias[j] += gb;
    }
}

} // namespace ref

} // namespace minimm::kern
