#include "minimm/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "minimm/kernels.hpp"

namespace minimm::ops {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

// b broadcasts over the rows of a when a is [m x n] and b is [n].
bool row_broadcast(const Tensor& a, const Tensor& b) {
    return a.shape().size() == 2 && b.shape().size() == 1 && a.shape()[1] == b.shape()[0];
}

double softplus(double z) {
    if (z > 30.0) return z;
    if (z < -30.0) return std::exp(z);
    return std::log1p(std::exp(z));
}

double sigmoid_neg(double x) { // sigma(-x), stable
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(x));
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    if (same_shape(a, b)) {
        std::vector<double> y(a.numel());
        kern::add(a.data().data(), b.data().data(), y.data(), y.size());
        return make_op("add", a.shape(), std::move(y), {a, b}, [](TensorImpl& self) {
            auto pa = self.parents[0], pb = self.parents[1];
            self.backward_fn = [sp = &self, pa, pb]() {
                if (pa->requires_grad)
                    kern::axpy(sp->grad.data(), 1.0, ensure_grad(*pa).data(), sp->grad.size());
                if (pb->requires_grad)
                    kern::axpy(sp->grad.data(), 1.0, ensure_grad(*pb).data(), sp->grad.size());
            };
        });
    }
    require(row_broadcast(a, b), "add: shapes " + shape_str(a.shape()) + " vs " +
                                     shape_str(b.shape()) + " are not addable");
    const int m = a.rows(), n = a.cols();
    std::vector<double> y(a.numel());
    const double* av = a.data().data();
    const double* bv = b.data().data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) y[size_t(i) * n + j] = av[size_t(i) * n + j] + bv[j];
    return make_op("add", a.shape(), std::move(y), {a, b}, [m, n](TensorImpl& self) {
        auto pa = self.parents[0], pb = self.parents[1];
        self.backward_fn = [sp = &self, pa, pb, m, n]() {
            const double* gy = sp->grad.data();
            if (pa->requires_grad)
                kern::axpy(gy, 1.0, ensure_grad(*pa).data(), sp->grad.size());
            if (pb->requires_grad) {
                double* gb = ensure_grad(*pb).data();
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < m; ++i) s += gy[size_t(i) * n + j];
                    gb[j] += s;
                }
            }
        };
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (same_shape(a, b)) {
        std::vector<double> y(a.numel());
        const double* av = a.data().data();
        const double* bv = b.data().data();
        for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
        return make_op("sub", a.shape(), std::move(y), {a, b}, [](TensorImpl& self) {
            auto pa = self.parents[0], pb = self.parents[1];
            self.backward_fn = [sp = &self, pa, pb]() {
                if (pa->requires_grad)
                    kern::axpy(sp->grad.data(), 1.0, ensure_grad(*pa).data(), sp->grad.size());
                if (pb->requires_grad)
                    kern::axpy(sp->grad.data(), -1.0, ensure_grad(*pb).data(), sp->grad.size());
            };
        });
    }
    require(row_broadcast(a, b), "sub: incompatible shapes");
    return add(a, scale(b, -1.0));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(same_shape(a, b), "mul: shapes differ");
    std::vector<double> y(a.numel());
    kern::mul(a.data().data(), b.data().data(), y.data(), y.size());
    return make_op("mul", a.shape(), std::move(y), {a, b}, [](TensorImpl& self) {
        auto pa = self.parents[0], pb = self.parents[1];
        self.backward_fn = [sp = &self, pa, pb]() {
            const double* gy = sp->grad.data();
            const size_t n = sp->grad.size();
            if (pa->requires_grad) {
                double* ga = ensure_grad(*pa).data();
                const double* bv = pb->value.data();
                for (size_t i = 0; i < n; ++i) ga[i] += gy[i] * bv[i];
            }
            if (pb->requires_grad) {
                double* gb = ensure_grad(*pb).data();
                const double* av = pa->value.data();
                for (size_t i = 0; i < n; ++i) gb[i] += gy[i] * av[i];
            }
        };
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> y(a.numel());
    kern::scale(a.data().data(), s, y.data(), y.size());
    return make_op("scale", a.shape(), std::move(y), {a}, [s](TensorImpl& self) {
        auto pa = self.parents[0];
        self.backward_fn = [sp = &self, pa, s]() {
            if (pa->requires_grad)
                kern::axpy(sp->grad.data(), s, ensure_grad(*pa).data(), sp->grad.size());
        };
    });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2,
            "matmul: both inputs must be rank 2");
    require(a.cols() == b.rows(), "matmul: inner dimensions disagree, " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> y(size_t(m) * size_t(n));
    kern::gemm_nn(m, k, n, a.data().data(), b.data().data(), y.data(), false);
    return make_op("matmul", Shape{m, n}, std::move(y), {a, b}, [m, k, n](TensorImpl& self) {
        auto pa = self.parents[0], pb = self.parents[1];
        self.backward_fn = [sp = &self, pa, pb, m, k, n]() {
            const double* gy = sp->grad.data();
            if (pa->requires_grad)
                kern::gemm_nt(m, n, k, gy, pb->value.data(), ensure_grad(*pa).data(), true);
            if (pb->requires_grad)
                kern::gemm_tn(k, m, n, pa->value.data(), gy, ensure_grad(*pb).data(), true);
        };
    });
}

Tensor transpose(const Tensor& a) {
    require(a.shape().size() == 2, "transpose: rank 2 required");
    const int m = a.rows(), n = a.cols();
    std::vector<double> y(a.numel());
    const double* av = a.data().data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) y[size_t(j) * m + i] = av[size_t(i) * n + j];
    return make_op("transpose", Shape{n, m}, std::move(y), {a}, [m, n](TensorImpl& self) {
        auto pa = self.parents[0];
        self.backward_fn = [sp = &self, pa, m, n]() {
            if (!pa->requires_grad) return;
            double* ga = ensure_grad(*pa).data();
            const double* gy = sp->grad.data();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga[size_t(i) * n + j] += gy[size_t(j) * m + i];
        };
    });
}

Tensor gelu(const Tensor& a) {
    std::vector<double> y(a.numel());
    kern::gelu(a.data().data(), y.data(), y.size());
    return make_op("gelu", a.shape(), std::move(y), {a}, [](TensorImpl& self) {
        auto pa = self.parents[0];
        self.backward_fn = [sp = &self, pa]() {
            if (pa->requires_grad)
                kern::gelu_grad(pa->value.data(), sp->grad.data(),
                                ensure_grad(*pa).data(), sp->grad.size());
        };
    });
}

Tensor log_sigmoid(const Tensor& a) {
    std::vector<double> y(a.numel());
    const double* av = a.data().data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = -softplus(-av[i]);
    return make_op("log_sigmoid", a.shape(), std::move(y), {a}, [](TensorImpl& self) {
        auto pa = self.parents[0];
        self.backward_fn = [sp = &self, pa]() {
            if (!pa->requires_grad) return;
            double* ga = ensure_grad(*pa).data();
            const double* gy = sp->grad.data();
            const double* av = pa->value.data();
            for (size_t i = 0; i < sp->grad.size(); ++i) ga[i] += gy[i] * sigmoid_neg(av[i]);
        };
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require(x.shape().size() == 2, "layer_norm: rank 2 input required");
    const int m = x.rows(), n = x.cols();
    require(gain.shape() == Shape{n} && bias.shape() == Shape{n},
            "layer_norm: gain/bias must be rank-1 of width " + std::to_string(n));
    std::vector<double> y(x.numel());
    auto mean = std::make_shared<std::vector<double>>(m);
    auto rstd = std::make_shared<std::vector<double>>(m);
    kern::layer_norm_rows(x.data().data(), gain.data().data(), bias.data().data(),
                          y.data(), mean->data(), rstd->data(), m, n, eps);
    return make_op("layer_norm", x.shape(), std::move(y), {x, gain, bias},
                   [m, n, mean, rstd](TensorImpl& self) {
                       auto px = self.parents[0], pg = self.parents[1], pb = self.parents[2];
                       self.backward_fn = [sp = &self, px, pg, pb, m, n, mean, rstd]() {
                           // The kernel writes all three grads; route the ones
                           // not required into scratch.
                           std::vector<double> scratch_x, scratch_g, scratch_b;
                           double* gx = px->requires_grad ? ensure_grad(*px).data()
                                                          : (scratch_x.assign(size_t(m) * n, 0.0),
                                                             scratch_x.data());
                           double* gg = pg->requires_grad ? ensure_grad(*pg).data()
                                                          : (scratch_g.assign(size_t(n), 0.0),
                                                             scratch_g.data());
                           double* gb = pb->requires_grad ? ensure_grad(*pb).data()
                                                          : (scratch_b.assign(size_t(n), 0.0),
                                                             scratch_b.data());
                           kern::layer_norm_rows_grad(px->value.data(), pg->value.data(),
                                                      mean->data(), rstd->data(), sp->grad.data(),
                                                      gx, gg, gb, m, n);
                       };
                   });
}

Tensor softmax_rows(const Tensor& x) {
    require(x.shape().size() == 2, "softmax_rows: rank 2 required");
    const int m = x.rows(), n = x.cols();
    std::vector<double> y(x.numel());
    kern::softmax_rows(x.data().data(), y.data(), m, n);
    return make_op("softmax_rows", x.shape(), std::move(y), {x}, [m, n](TensorImpl& self) {
        auto px = self.parents[0];
        self.backward_fn = [sp = &self, px, m, n]() {
            if (px->requires_grad)
                kern::softmax_rows_grad(sp->value.data(), sp->grad.data(),
                                        ensure_grad(*px).data(), m, n);
        };
    });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
    require(table.shape().size() == 2, "embedding_lookup: table must be rank 2");
    require(!ids.empty(), "embedding_lookup: empty id list");
    const int v = table.rows(), d = table.cols();
    for (int id : ids)
        require(id >= 0 && id < v, "embedding_lookup: id " + std::to_string(id) +
                                       " outside vocabulary of size " + std::to_string(v));
    const int t = int(ids.size());
    std::vector<double> y(size_t(t) * size_t(d));
    const double* tv = table.data().data();
    for (int i = 0; i < t; ++i)
        std::copy_n(tv + size_t(ids[i]) * d, d, y.data() + size_t(i) * d);
    auto idv = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
    return make_op("embedding_lookup", Shape{t, d}, std::move(y), {table},
                   [d, idv](TensorImpl& self) {
                       auto pt = self.parents[0];
                       self.backward_fn = [sp = &self, pt, d, idv]() {
                           if (!pt->requires_grad) return;
                           double* gt = ensure_grad(*pt).data();
                           const double* gy = sp->grad.data();
                           // rows may repeat; keep the scatter serial
                           for (size_t i = 0; i < idv->size(); ++i)
                               for (int j = 0; j < d; ++j)
                                   gt[size_t((*idv)[i]) * d + j] += gy[i * d + j];
                       };
                   });
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
    require(x.shape().size() == 2, "slice_rows: rank 2 required");
    require(0 <= r0 && r0 < r1 && r1 <= x.rows(), "slice_rows: bad range");
    const int n = x.cols(), m = r1 - r0;
    std::vector<double> y(size_t(m) * n);
    std::copy_n(x.data().data() + size_t(r0) * n, y.size(), y.data());
    return make_op("slice_rows", Shape{m, n}, std::move(y), {x}, [r0, m, n](TensorImpl& self) {
        auto px = self.parents[0];
        self.backward_fn = [sp = &self, px, r0, m, n]() {
            if (!px->requires_grad) return;
            double* gx = ensure_grad(*px).data() + size_t(r0) * n;
            kern::axpy(sp->grad.data(), 1.0, gx, size_t(m) * n);
        };
    });
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
    require(x.shape().size() == 2, "slice_cols: rank 2 required");
    require(0 <= c0 && c0 < c1 && c1 <= x.cols(), "slice_cols: bad range");
    const int m = x.rows(), n = x.cols(), w = c1 - c0;
    std::vector<double> y(size_t(m) * w);
    const double* xv = x.data().data();
    for (int i = 0; i < m; ++i)
        std::copy_n(xv + size_t(i) * n + c0, w, y.data() + size_t(i) * w);
    return make_op("slice_cols", Shape{m, w}, std::move(y), {x}, [c0, m, n, w](TensorImpl& self) {
        auto px = self.parents[0];
        self.backward_fn = [sp = &self, px, c0, m, n, w]() {
            if (!px->requires_grad) return;
            double* gx = ensure_grad(*px).data();
            const double* gy = sp->grad.data();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j) gx[size_t(i) * n + c0 + j] += gy[size_t(i) * w + j];
        };
    });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2 && a.cols() == b.cols(),
            "concat_rows: column counts differ");
    const int ma = a.rows(), mb = b.rows(), n = a.cols();
    std::vector<double> y(size_t(ma + mb) * n);
    std::copy_n(a.data().data(), size_t(ma) * n, y.data());
    std::copy_n(b.data().data(), size_t(mb) * n, y.data() + size_t(ma) * n);
    return make_op("concat_rows", Shape{ma + mb, n}, std::move(y), {a, b},
                   [ma, mb, n](TensorImpl& self) {
                       auto pa = self.parents[0], pb = self.parents[1];
                       self.backward_fn = [sp = &self, pa, pb, ma, mb, n]() {
                           const double* gy = sp->grad.data();
                           if (pa->requires_grad)
                               kern::axpy(gy, 1.0, ensure_grad(*pa).data(), size_t(ma) * n);
                           if (pb->requires_grad)
                               kern::axpy(gy + size_t(ma) * n, 1.0, ensure_grad(*pb).data(),
                                          size_t(mb) * n);
                       };
                   });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2 && a.rows() == b.rows(),
            "concat_cols: row counts differ");
    const int m = a.rows(), na = a.cols(), nb = b.cols();
    std::vector<double> y(size_t(m) * (na + nb));
    const double* av = a.data().data();
    const double* bv = b.data().data();
    for (int i = 0; i < m; ++i) {
        std::copy_n(av + size_t(i) * na, na, y.data() + size_t(i) * (na + nb));
        std::copy_n(bv + size_t(i) * nb, nb, y.data() + size_t(i) * (na + nb) + na);
    }
    return make_op("concat_cols", Shape{m, na + nb}, std::move(y), {a, b},
                   [m, na, nb](TensorImpl& self) {
                       auto pa = self.parents[0], pb = self.parents[1];
                       self.backward_fn = [sp = &self, pa, pb, m, na, nb]() {
                           const double* gy = sp->grad.data();
                           const int n = na + nb;
                           if (pa->requires_grad) {
                               double* ga = ensure_grad(*pa).data();
                               for (int i = 0; i < m; ++i)
                                   for (int j = 0; j < na; ++j)
                                       ga[size_t(i) * na + j] += gy[size_t(i) * n + j];
                           }
                           if (pb->requires_grad) {
                               double* gb = ensure_grad(*pb).data();
                               for (int i = 0; i < m; ++i)
                                   for (int j = 0; j < nb; ++j)
                                       gb[size_t(i) * nb + j] += gy[size_t(i) * n + na + j];
                           }
                       };
                   });
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_op("sum_all", Shape{1}, {s}, {x}, [](TensorImpl& self) {
        auto px = self.parents[0];
        self.backward_fn = [sp = &self, px]() {
            if (!px->requires_grad) return;
            double* gx = ensure_grad(*px).data();
            const double g = sp->grad[0];
            for (size_t i = 0; i < px->value.size(); ++i) gx[i] += g;
        };
    });
}

Tensor mean_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    const double inv = 1.0 / double(x.numel());
    return make_op("mean_all", Shape{1}, {s * inv}, {x}, [inv](TensorImpl& self) {
        auto px = self.parents[0];
        self.backward_fn = [sp = &self, px, inv]() {
            if (!px->requires_grad) return;
            double* gx = ensure_grad(*px).data();
            const double g = sp->grad[0] * inv;
            for (size_t i = 0; i < px->value.size(); ++i) gx[i] += g;
        };
    });
}

Tensor mean_rows(const Tensor& x) {
    require(x.shape().size() == 2, "mean_rows: rank 2 required");
    const int m = x.rows(), n = x.cols();
    std::vector<double> y(n, 0.0);
    const double* xv = x.data().data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) y[j] += xv[size_t(i) * n + j];
    const double inv = 1.0 / double(m);
    for (int j = 0; j < n; ++j) y[j] *= inv;
    return make_op("mean_rows", Shape{n}, std::move(y), {x}, [m, n, inv](TensorImpl& self) {
        auto px = self.parents[0];
        self.backward_fn = [sp = &self, px, m, n, inv]() {
            if (!px->requires_grad) return;
            double* gx = ensure_grad(*px).data();
            const double* gy = sp->grad.data();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) gx[size_t(i) * n + j] += gy[j] * inv;
        };
    });
}

Tensor sum_list(const std::vector<Tensor>& xs) {
    require(!xs.empty(), "sum_list: empty input list");
    for (const auto& t : xs)
        require(t.shape() == xs[0].shape(), "sum_list: shapes differ");
    std::vector<double> y(xs[0].numel(), 0.0);
    for (const auto& t : xs) {
        const double* v = t.data().data();
        for (size_t i = 0; i < y.size(); ++i) y[i] += v[i];
    }
    return make_op("sum_list", xs[0].shape(), std::move(y), xs, [](TensorImpl& self) {
        self.backward_fn = [sp = &self]() {
            for (auto& p : sp->parents) {
                if (p->requires_grad)
                    kern::axpy(sp->grad.data(), 1.0, ensure_grad(*p).data(), sp->grad.size());
            }
        };
    });
}

namespace {

struct MaskedSoftmaxState {
    std::vector<int> rows;     // masked positions
    std::vector<double> probs; // rows.size() x vocab softmax rows
};

std::shared_ptr<MaskedSoftmaxState> masked_softmax(const Tensor& logits,
                                                   std::span<const int> targets,
                                                   std::span<const int> mask,
                                                   double* neg_logprob_sum) {
    require(logits.shape().size() == 2, "cross_entropy: logits must be rank 2");
    const int t = logits.rows(), v = logits.cols();
    require(int(targets.size()) == t && int(mask.size()) == t,
            "cross_entropy: targets/mask length must equal logit rows");
    for (int i = 0; i < t; ++i) {
        require(mask[i] == 0 || mask[i] == 1, "cross_entropy: mask entries must be 0/1");
        if (mask[i])
            require(targets[i] >= 0 && targets[i] < v,
                    "cross_entropy: target id out of range at position " + std::to_string(i));
    }
    auto st = std::make_shared<MaskedSoftmaxState>();
    const double* x = logits.data().data();
    double acc = 0.0;
    for (int i = 0; i < t; ++i) {
        if (!mask[i]) continue;
        const double* row = x + size_t(i) * v;
        double mx = row[0];
        for (int j = 1; j < v; ++j) mx = row[j] > mx ? row[j] : mx;
        double s = 0.0;
        const size_t base = st->probs.size();
        st->probs.resize(base + size_t(v));
        for (int j = 0; j < v; ++j) {
            const double e = std::exp(row[j] - mx);
            st->probs[base + j] = e;
            s += e;
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < v; ++j) st->probs[base + j] *= inv;
        acc += (mx + std::log(s)) - row[targets[i]];
        st->rows.push_back(i);
    }
    *neg_logprob_sum = acc;
    return st;
}

} // namespace

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets,
                             std::span<const int> mask) {
    double nll = 0.0;
    auto st = masked_softmax(logits, targets, mask, &nll);
    const size_t count = st->rows.size();
    const double value = count == 0 ? 0.0 : nll / double(count);
    auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    const int v = logits.cols();
    return make_op("softmax_cross_entropy", Shape{1}, {value}, {logits},
                   [st, tgt, v, count](TensorImpl& self) {
                       auto pl = self.parents[0];
                       self.backward_fn = [sp = &self, pl, st, tgt, v, count]() {
                           if (!pl->requires_grad || count == 0) return;
                           double* gx = ensure_grad(*pl).data();
                           const double g = sp->grad[0] / double(count);
                           for (size_t r = 0; r < st->rows.size(); ++r) {
                               const int i = st->rows[r];
                               const double* p = st->probs.data() + r * size_t(v);
                               double* grow = gx + size_t(i) * v;
                               for (int j = 0; j < v; ++j) grow[j] += g * p[j];
                               grow[(*tgt)[i]] -= g;
                           }
                       };
                   });
}

Tensor masked_logprob_sum(const Tensor& logits, std::span<const int> targets,
                          std::span<const int> mask) {
    double nll = 0.0;
    auto st = masked_softmax(logits, targets, mask, &nll);
    auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    const int v = logits.cols();
    return make_op("masked_logprob_sum", Shape{1}, {-nll}, {logits},
                   [st, tgt, v](TensorImpl& self) {
                       auto pl = self.parents[0];
                       self.backward_fn = [sp = &self, pl, st, tgt, v]() {
                           if (!pl->requires_grad || st->rows.empty()) return;
                           double* gx = ensure_grad(*pl).data();
                           const double g = sp->grad[0];
                           for (size_t r = 0; r < st->rows.size(); ++r) {
                               const int i = st->rows[r];
                               const double* p = st->probs.data() + r * size_t(v);
                               double* grow = gx + size_t(i) * v;
                               for (int j = 0; j < v; ++j) grow[j] -= g * p[j];
                               grow[(*tgt)[i]] += g;
                           }
                       };
                   });
}

} // namespace minimm::ops
