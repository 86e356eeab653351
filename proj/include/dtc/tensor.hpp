// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over dense double tensors. Every operator
// records its inputs and a backward closure on a tape node; backward() runs
// the tape in reverse topological order. All values are checked for
// finiteness as they are produced so numerical blowups fail loudly at the
// op that caused them.

#pragma once

#include "dtc/common.hpp"

#include <functional>
#include <memory>

namespace dtc::nn {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad; // same size as value when requires_grad
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void()> backward_fn; // accumulates into parents' grads
    std::string op; // producing op, for diagnostics
};

// Graph recording switch. Inside a NoGradGuard ops compute values only,
// so inference does not build a tape.
bool grad_enabled();

class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor from_values(std::vector<std::size_t> shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void zero_grad();

    // Reverse-mode sweep from a scalar root.
    void backward();

    NodePtr node() const { return node_; }

  private:
    NodePtr node_;
};

void check_finite(const char* op, const std::vector<double>& v);

// --- operators -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);      // same shape
Tensor sub(const Tensor& a, const Tensor& b);      // same shape
Tensor mul(const Tensor& a, const Tensor& b);      // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor add_rowvec(const Tensor& x, const Tensor& b); // x [m,n] + b [n] per row
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor transpose(const Tensor& x);                   // [m,n] -> [n,m]
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gelu(const Tensor& x); // exact erf form
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-12); // per row of [m,n]
Tensor softmax_rows(const Tensor& x);
// Row t attends to columns 0..t; masked entries are exactly zero.
Tensor causal_softmax(const Tensor& scores);
// x [C,H,W], w [Co,C,kh,kw], b [Co]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// --- optimizer -------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
  public:
    Adam(std::vector<Tensor> params, AdamConfig cfg = {});
    void step();      // consumes accumulated grads, with bias correction
    void zero_grad(); // clears grads of all managed params
    void set_lr(double lr) { cfg_.lr = lr; }
    std::size_t step_count() const { return t_; }

  private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

// Single-parameter Adam update, exposed for oracle tests. Updates p/m/v
// in place given gradient g and the 1-based step number t.
void adam_step_scalar(double& p, double g, double& m, double& v, std::size_t t,
                      const AdamConfig& cfg);

// --- gradient check --------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t n_checked = 0;
    std::string worst; // "param_idx[i]" of the worst component
};

// Compares reverse-mode gradients of loss_fn against central finite
// differences with the given step. loss_fn must rebuild its graph from the
// current parameter values on every call. Relative error per component is
// |ad - fd| / max(|ad|, |fd|, floor).
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           double fd_step = 1e-5, double floor = 1e-6);

} // namespace dtc::nn
