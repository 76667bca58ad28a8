#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "minimm/rng.hpp"

namespace minimm {

using Shape = std::vector<int>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Every value participating in differentiation lives in a TensorImpl node.
// Forward evaluation appends nodes in definition order, so the implicit
// record (parents + backward closures) is topologically ordered by
// construction; backward() walks it once in reverse.
struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first needed, then value-sized
    bool requires_grad = false;
    const char* op = "leaf";
    uint64_t id = 0;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    // Reads this->grad, accumulates into parents' grads. Captures parent
    // handles by value; never captures an owning handle to its own node.
    std::function<void()> backward_fn;
};

std::vector<double>& ensure_grad(TensorImpl& t);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> p) : p_(std::move(p)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_vector(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

    bool defined() const { return p_ != nullptr; }
    const Shape& shape() const { return p_->shape; }
    size_t numel() const { return p_->value.size(); }
    int rows() const;
    int cols() const;

    std::vector<double>& data() { return p_->value; }
    const std::vector<double>& data() const { return p_->value; }
    double value_at(size_t i) const { return p_->value[i]; }
    double scalar_value() const;

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool rg) { p_->requires_grad = rg; }

    bool has_grad() const { return !p_->grad.empty(); }
    std::vector<double>& grad() { return ensure_grad(*p_); }
    const std::vector<double>& grad_view() const;
    void zero_grad();

    const char* op() const { return p_->op; }
    uint64_t id() const { return p_->id; }

    // Value copy with no graph attachment.
    Tensor detach() const;

    TensorImpl* impl() const { return p_.get(); }
    const std::shared_ptr<TensorImpl>& ptr() const { return p_; }

private:
    std::shared_ptr<TensorImpl> p_;
};

// Thread-local switch; while disabled, ops produce plain values with no
// recorded parents and requires_grad == false.
bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Populates grads of every requires_grad tensor reachable from loss.
// Gradients accumulate; callers zero parameter grads between steps.
void backward(const Tensor& loss);

// Number of nodes reachable from t through recorded parents (t included).
size_t graph_size(const Tensor& t);

// Factory used by ops: computes requires_grad from inputs and the grad mode,
// records parents and the backward closure only when a grad will be needed.
Tensor make_op(const char* name, Shape shape, std::vector<double> value,
               const std::vector<Tensor>& inputs,
               const std::function<void(TensorImpl&)>& make_backward);

// Throws if any element is NaN/Inf; every op runs this on its output.
void check_finite(const TensorImpl& t, const char* op);

} // namespace minimm
