#include "minimm/tensor.hpp"

#include <atomic>
#include <cmath>
#include <unordered_set>

namespace minimm {

namespace {
std::atomic<uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> value, bool rg) {
    if (shape_numel(shape) != value.size())
        throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                    " does not match data length " + std::to_string(value.size()));
    auto p = std::make_shared<TensorImpl>();
    p->shape = std::move(shape);
    p->value = std::move(value);
    p->requires_grad = rg;
    p->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return p;
}
} // namespace

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
        n *= size_t(d);
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::vector<double>& ensure_grad(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.value.size(), 0.0);
    return t.grad;
}

Tensor Tensor::zeros(Shape shape, bool rg) {
    auto n = shape_numel(shape);
    return Tensor(new_impl(std::move(shape), std::vector<double>(n, 0.0), rg));
}

Tensor Tensor::full(Shape shape, double v, bool rg) {
    auto n = shape_numel(shape);
    return Tensor(new_impl(std::move(shape), std::vector<double>(n, v), rg));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> data, bool rg) {
    return Tensor(new_impl(std::move(shape), std::move(data), rg));
}

Tensor Tensor::scalar(double v, bool rg) {
    return Tensor(new_impl(Shape{1}, std::vector<double>{v}, rg));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool rg) {
    auto n = shape_numel(shape);
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = rng.normal() * stddev;
    return Tensor(new_impl(std::move(shape), std::move(v), rg));
}

int Tensor::rows() const {
    if (p_->shape.size() != 2) throw std::invalid_argument("tensor: rows() needs rank 2");
    return p_->shape[0];
}

int Tensor::cols() const {
    if (p_->shape.size() != 2) throw std::invalid_argument("tensor: cols() needs rank 2");
    return p_->shape[1];
}

double Tensor::scalar_value() const {
    if (numel() != 1) throw std::invalid_argument("tensor: scalar_value on non-scalar");
    return p_->value[0];
}

const std::vector<double>& Tensor::grad_view() const {
    return ensure_grad(*p_);
}

void Tensor::zero_grad() {
    auto& g = ensure_grad(*p_);
    std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
    return Tensor(new_impl(p_->shape, p_->value, false));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void check_finite(const TensorImpl& t, const char* op) {
    for (double v : t.value) {
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
    }
}

Tensor make_op(const char* name, Shape shape, std::vector<double> value,
               const std::vector<Tensor>& inputs,
               const std::function<void(TensorImpl&)>& make_backward) {
    bool rg = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) rg = rg || in.requires_grad();
    }
    auto impl = new_impl(std::move(shape), std::move(value), rg);
    impl->op = name;
    check_finite(*impl, name);
    if (rg) {
        impl->parents.reserve(inputs.size());
        for (const auto& in : inputs) impl->parents.push_back(in.ptr());
        make_backward(*impl);
    }
    return Tensor(impl);
}

namespace {

// Iterative postorder over recorded parents.
std::vector<TensorImpl*> topo_from(TensorImpl* root) {
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorImpl* next = node->parents[idx++].get();
            if (visited.insert(next).second) stack.emplace_back(next, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

} // namespace

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a defined scalar");
    TensorImpl* root = loss.impl();
    auto order = topo_from(root);
    for (TensorImpl* n : order) {
        if (n->requires_grad) ensure_grad(*n);
    }
    ensure_grad(*root)[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* n = *it;
        if (n->requires_grad && n->backward_fn) n->backward_fn();
    }
}

size_t graph_size(const Tensor& t) {
    if (!t.defined()) return 0;
    return topo_from(t.impl()).size();
}

} // namespace minimm
