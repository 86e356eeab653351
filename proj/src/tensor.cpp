// SPDX-License-Identifier: Apache-2.0

#include "dtc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace dtc::nn {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Allocates (once) and returns the grad buffer of a node, or nullptr when
// the node does not participate in differentiation.
double* grad_buf(TensorNode* n) {
    if (!n || !n->requires_grad) return nullptr;
    if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
    return n->grad.data();
}

NodePtr make_node(const char* op, std::vector<std::size_t> shape, std::vector<double> value,
                  std::vector<NodePtr> parents) {
    check_finite(op, value);
    auto node = std::make_shared<TensorNode>();
    node->op = op;
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        for (const auto& p : parents)
            if (p && p->requires_grad) {
                node->requires_grad = true;
                break;
            }
        if (node->requires_grad) node->parents = std::move(parents);
    }
    return node;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
}

} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericError(std::string(op) + ": produced a non-finite value");
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value.assign(shape_numel(node->shape), 0.0);
    node->requires_grad = requires_grad;
    node->op = "leaf";
    return Tensor(node);
}

Tensor Tensor::from_values(std::vector<std::size_t> shape, std::vector<double> values,
                           bool requires_grad) {
    if (shape_numel(shape) != values.size())
        throw ValidationError("from_values: " + std::to_string(values.size()) +
                              " values for shape " + shape_str(shape));
    check_finite("from_values", values);
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->op = "leaf";
    return Tensor(node);
}

Tensor Tensor::scalar(double v) { return from_values({1}, {v}); }

std::vector<double>& Tensor::grad() {
    if (!node_->requires_grad) throw ValidationError("grad() on a tensor without gradients");
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
    return const_cast<Tensor*>(this)->grad();
}

double Tensor::item() const {
    if (numel() != 1) throw ValidationError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
}

void Tensor::zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::backward() {
    if (!node_) throw ValidationError("backward() on an empty tensor");
    if (numel() != 1) throw ValidationError("backward() requires a scalar root");
    if (!node_->requires_grad)
        throw ValidationError("backward() on a graph that records no gradients");

    // Reverse topological order via iterative DFS over recorded parents.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            TensorNode* p = n->parents[idx++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    grad_buf(node_.get());
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

// --- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
    auto out = make_node("add", a.shape(), std::move(v), {a.node(), b.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* pa = a.node().get();
        TensorNode* pb = b.node().get();
        out->backward_fn = [self, pa, pb]() {
            const std::size_t n = self->value.size();
            if (double* ga = grad_buf(pa))
                for (std::size_t i = 0; i < n; ++i) ga[i] += self->grad[i];
            if (double* gb = grad_buf(pb))
                for (std::size_t i = 0; i < n; ++i) gb[i] += self->grad[i];
        };
    }
    return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
    auto out = make_node("sub", a.shape(), std::move(v), {a.node(), b.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* pa = a.node().get();
        TensorNode* pb = b.node().get();
        out->backward_fn = [self, pa, pb]() {
            const std::size_t n = self->value.size();
            if (double* ga = grad_buf(pa))
                for (std::size_t i = 0; i < n; ++i) ga[i] += self->grad[i];
            if (double* gb = grad_buf(pb))
                for (std::size_t i = 0; i < n; ++i) gb[i] -= self->grad[i];
        };
    }
    return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
    auto out = make_node("mul", a.shape(), std::move(v), {a.node(), b.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* pa = a.node().get();
        TensorNode* pb = b.node().get();
        out->backward_fn = [self, pa, pb]() {
            const std::size_t n = self->value.size();
            if (double* ga = grad_buf(pa))
                for (std::size_t i = 0; i < n; ++i) ga[i] += self->grad[i] * pb->value[i];
            if (double* gb = grad_buf(pb))
                for (std::size_t i = 0; i < n; ++i) gb[i] += self->grad[i] * pa->value[i];
        };
    }
    return Tensor(out);
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * c;
    auto out = make_node("scale", a.shape(), std::move(v), {a.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* pa = a.node().get();
        out->backward_fn = [self, pa, c]() {
            if (double* ga = grad_buf(pa))
                for (std::size_t i = 0; i < self->value.size(); ++i) ga[i] += self->grad[i] * c;
        };
    }
    return Tensor(out);
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (x.shape().size() != 2 || b.shape().size() != 1 || x.dim(1) != b.dim(0))
        throw ValidationError("add_rowvec: " + shape_str(x.shape()) + " + " +
                              shape_str(b.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[i * n + j] = x.values()[i * n + j] + b.values()[j];
    auto out = make_node("add_rowvec", x.shape(), std::move(v), {x.node(), b.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* px = x.node().get();
        TensorNode* pb = b.node().get();
        out->backward_fn = [self, px, pb, m, n]() {
            if (double* gx = grad_buf(px))
                for (std::size_t i = 0; i < m * n; ++i) gx[i] += self->grad[i];
            if (double* gb = grad_buf(pb))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += self->grad[i * n + j];
        };
    }
    return Tensor(out);
}

// --- matmul ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        throw ValidationError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> c(m * n, 0.0);
    {
        const double* pa = a.values().data();
        const double* pb = b.values().data();
        double* pc = c.data();
        parallel_for(m, [&](std::size_t i) {
            for (std::size_t l = 0; l < k; ++l) {
                const double ail = pa[i * k + l];
                const double* brow = pb + l * n;
                double* crow = pc + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
            }
        });
    }
    auto out = make_node("matmul", {m, n}, std::move(c), {a.node(), b.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* pa = a.node().get();
        TensorNode* pb = b.node().get();
        out->backward_fn = [self, pa, pb, m, k, n]() {
            const double* dy = self->grad.data();
            if (double* ga = grad_buf(pa)) {
                const double* bv = pb->value.data();
                parallel_for(m, [&](std::size_t i) {
                    for (std::size_t l = 0; l < k; ++l) {
                        double acc = 0.0;
                        const double* dyrow = dy + i * n;
                        const double* brow = bv + l * n;
                        for (std::size_t j = 0; j < n; ++j) acc += dyrow[j] * brow[j];
                        ga[i * k + l] += acc;
                    }
                });
            }
            if (double* gb = grad_buf(pb)) {
                const double* av = pa->value.data();
                parallel_for(k, [&](std::size_t l) {
                    double* gbrow = gb + l * n;
                    for (std::size_t i = 0; i < m; ++i) {
                        const double ail = av[i * k + l];
                        const double* dyrow = dy + i * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += ail * dyrow[j];
                    }
                });
            }
        };
    }
    return Tensor(out);
}

Tensor transpose(const Tensor& x) {
    if (x.shape().size() != 2) throw ValidationError("transpose: need rank-2 tensor");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[j * m + i] = x.values()[i * n + j];
    auto out = make_node("transpose", {n, m}, std::move(v), {x.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* px = x.node().get();
        out->backward_fn = [self, px, m, n]() {
            if (double* gx = grad_buf(px))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += self->grad[j * m + i];
        };
    }
    return Tensor(out);
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
    if (shape_numel(shape) != x.numel())
        throw ValidationError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                              " changes element count");
    auto out = make_node("reshape", std::move(shape), x.values(), {x.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* px = x.node().get();
        out->backward_fn = [self, px]() {
            if (double* gx = grad_buf(px))
                for (std::size_t i = 0; i < self->value.size(); ++i) gx[i] += self->grad[i];
        };
    }
    return Tensor(out);
}

// --- slicing / concatenation -------------------------------------------------

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
    if (x.shape().size() != 2 || r1 > x.dim(0) || r0 >= r1)
        throw ValidationError("slice_rows: bad range [" + std::to_string(r0) + "," +
                              std::to_string(r1) + ") for " + shape_str(x.shape()));
    const std::size_t n = x.dim(1);
    std::vector<double> v(x.values().begin() + static_cast<std::ptrdiff_t>(r0 * n),
                          x.values().begin() + static_cast<std::ptrdiff_t>(r1 * n));
    auto out = make_node("slice_rows", {r1 - r0, n}, std::move(v), {x.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* px = x.node().get();
        out->backward_fn = [self, px, r0, n]() {
            if (double* gx = grad_buf(px))
                for (std::size_t i = 0; i < self->value.size(); ++i) gx[r0 * n + i] += self->grad[i];
        };
    }
    return Tensor(out);
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    if (x.shape().size() != 2 || c1 > x.dim(1) || c0 >= c1)
        throw ValidationError("slice_cols: bad range [" + std::to_string(c0) + "," +
                              std::to_string(c1) + ") for " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1), w = c1 - c0;
    std::vector<double> v(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) v[i * w + j] = x.values()[i * n + c0 + j];
    auto out = make_node("slice_cols", {m, w}, std::move(v), {x.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* px = x.node().get();
        out->backward_fn = [self, px, m, n, w, c0]() {
            if (double* gx = grad_buf(px))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += self->grad[i * w + j];
        };
    }
    return Tensor(out);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ValidationError("concat_rows: no inputs");
    const std::size_t n = parts[0].dim(1);
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.dim(1) != n)
            throw ValidationError("concat_rows: column count mismatch");
        m += p.dim(0);
    }
    std::vector<double> v;
    v.reserve(m * n);
    std::vector<NodePtr> parents;
    for (const auto& p : parts) {
        v.insert(v.end(), p.values().begin(), p.values().end());
        parents.push_back(p.node());
    }
    auto out = make_node("concat_rows", {m, n}, std::move(v), std::move(parents));
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self]() {
            std::size_t off = 0;
            for (const auto& p : self->parents) {
                const std::size_t sz = p->value.size();
                if (double* gp = grad_buf(p.get()))
                    for (std::size_t i = 0; i < sz; ++i) gp[i] += self->grad[off + i];
                off += sz;
            }
        };
    }
    return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ValidationError("concat_cols: no inputs");
    const std::size_t m = parts[0].dim(0);
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.dim(0) != m)
            throw ValidationError("concat_cols: row count mismatch");
        n += p.dim(1);
    }
    std::vector<double> v(m * n);
    std::vector<NodePtr> parents;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) v[i * n + off + j] = p.values()[i * w + j];
        off += w;
        parents.push_back(p.node());
    }
    auto out = make_node("concat_cols", {m, n}, std::move(v), std::move(parents));
    if (out->requires_grad) {
        TensorNode* self = out.get();
        out->backward_fn = [self, m, n]() {
            std::size_t off2 = 0;
            for (const auto& p : self->parents) {
                const std::size_t w = p->shape[1];
                if (double* gp = grad_buf(p.get()))
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j)
                            gp[i * w + j] += self->grad[i * n + off2 + j];
                off2 += w;
            }
        };
    }
    return Tensor(out);
}

// --- nonlinearities ------------------------------------------------------------

Tensor gelu(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double xi = x.values()[i];
        v[i] = 0.5 * xi * (1.0 + std::erf(xi / std::sqrt(2.0)));
    }
    auto out = make_node("gelu", x.shape(), std::move(v), {x.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* px = x.node().get();
        out->backward_fn = [self, px]() {
            if (double* gx = grad_buf(px)) {
                const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * kPi);
                for (std::size_t i = 0; i < self->value.size(); ++i) {
                    const double xi = px->value[i];
                    const double d = 0.5 * (1.0 + std::erf(xi / std::sqrt(2.0))) +
                                     xi * inv_sqrt2pi * std::exp(-0.5 * xi * xi);
                    gx[i] += self->grad[i] * d;
                }
            }
        };
    }
    return Tensor(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.shape().size() != 2 || gamma.shape().size() != 1 || beta.shape().size() != 1 ||
        gamma.dim(0) != x.dim(1) || beta.dim(0) != x.dim(1))
        throw ValidationError("layer_norm: bad shapes");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> v(m * n);
    std::vector<double> inv_std(m), xhat(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.values().data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double xh = (row[j] - mu) * is;
            xhat[i * n + j] = xh;
            v[i * n + j] = gamma.values()[j] * xh + beta.values()[j];
        }
    }
    auto out = make_node("layer_norm", x.shape(), std::move(v),
                         {x.node(), gamma.node(), beta.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* px = x.node().get();
        TensorNode* pg = gamma.node().get();
        TensorNode* pb = beta.node().get();
        out->backward_fn = [self, px, pg, pb, m, n, inv_std = std::move(inv_std),
                            xhat = std::move(xhat)]() {
            const double* dy = self->grad.data();
            if (double* gg = grad_buf(pg))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += dy[i * n + j] * xhat[i * n + j];
            if (double* gb = grad_buf(pb))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
            if (double* gx = grad_buf(px)) {
                for (std::size_t i = 0; i < m; ++i) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double g = dy[i * n + j] * pg->value[j];
                        mean_g += g;
                        mean_gx += g * xhat[i * n + j];
                    }
                    mean_g /= static_cast<double>(n);
                    mean_gx /= static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const double g = dy[i * n + j] * pg->value[j];
                        gx[i * n + j] +=
                            (g - mean_g - xhat[i * n + j] * mean_gx) * inv_std[i];
                    }
                }
            }
        };
    }
    return Tensor(out);
}

namespace {

// Softmax over row prefix [0, len); remaining columns are zeroed.
void softmax_prefix(const double* in, double* out, std::size_t len, std::size_t n) {
    double mx = in[0];
    for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
        out[j] = std::exp(in[j] - mx);
        denom += out[j];
    }
    for (std::size_t j = 0; j < len; ++j) out[j] /= denom;
    for (std::size_t j = len; j < n; ++j) out[j] = 0.0;
}

Tensor softmax_impl(const char* op, const Tensor& x, bool causal) {
    if (x.shape().size() != 2) throw ValidationError(std::string(op) + ": need rank-2 tensor");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (causal && m != n) throw ValidationError("causal_softmax: need square score matrix");
    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t len = causal ? i + 1 : n;
        softmax_prefix(x.values().data() + i * n, v.data() + i * n, len, n);
    }
    auto out = make_node(op, x.shape(), std::move(v), {x.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* px = x.node().get();
        out->backward_fn = [self, px, m, n, causal]() {
            if (double* gx = grad_buf(px)) {
                const double* y = self->value.data();
                const double* dy = self->grad.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const std::size_t len = causal ? i + 1 : n;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < len; ++j) dot += dy[i * n + j] * y[i * n + j];
                    for (std::size_t j = 0; j < len; ++j)
                        gx[i * n + j] += y[i * n + j] * (dy[i * n + j] - dot);
                }
            }
        };
    }
    return Tensor(out);
}

} // namespace

Tensor softmax_rows(const Tensor& x) { return softmax_impl("softmax_rows", x, false); }
Tensor causal_softmax(const Tensor& scores) {
    return softmax_impl("causal_softmax", scores, true);
}

// --- convolution ---------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad) {
    if (x.shape().size() != 3 || w.shape().size() != 4 || b.shape().size() != 1)
        throw ValidationError("conv2d: need x[C,H,W], w[Co,C,kh,kw], b[Co]");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != C || b.dim(0) != Co)
        throw ValidationError("conv2d: channel mismatch between x, w, b");
    if (stride == 0) throw ValidationError("conv2d: stride must be positive");
    if (H + 2 * pad < kh || W + 2 * pad < kw)
        throw ValidationError("conv2d: kernel larger than padded input");
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;

    std::vector<double> v(Co * Ho * Wo);
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    const double* bv = b.values().data();
    parallel_for(Co, [&](std::size_t co) {
        for (std::size_t ho = 0; ho < Ho; ++ho)
            for (std::size_t wo = 0; wo < Wo; ++wo) {
                double acc = bv[co];
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t i = 0; i < kh; ++i) {
                        const std::ptrdiff_t hi =
                            static_cast<std::ptrdiff_t>(ho * stride + i) -
                            static_cast<std::ptrdiff_t>(pad);
                        if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t j = 0; j < kw; ++j) {
                            const std::ptrdiff_t wi =
                                static_cast<std::ptrdiff_t>(wo * stride + j) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(W)) continue;
                            acc += xv[(c * H + static_cast<std::size_t>(hi)) * W +
                                      static_cast<std::size_t>(wi)] *
                                   wv[((co * C + c) * kh + i) * kw + j];
                        }
                    }
                v[(co * Ho + ho) * Wo + wo] = acc;
            }
    });
    auto out = make_node("conv2d", {Co, Ho, Wo}, std::move(v), {x.node(), w.node(), b.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* px = x.node().get();
        TensorNode* pw = w.node().get();
        TensorNode* pb = b.node().get();
        out->backward_fn = [self, px, pw, pb, C, H, W, Co, kh, kw, Ho, Wo, stride, pad]() {
            const double* dy = self->grad.data();
            double* gx = grad_buf(px);
            double* gw = grad_buf(pw);
            double* gb = grad_buf(pb);
            for (std::size_t co = 0; co < Co; ++co)
                for (std::size_t ho = 0; ho < Ho; ++ho)
                    for (std::size_t wo = 0; wo < Wo; ++wo) {
                        const double g = dy[(co * Ho + ho) * Wo + wo];
                        if (gb) gb[co] += g;
                        for (std::size_t c = 0; c < C; ++c)
                            for (std::size_t i = 0; i < kh; ++i) {
                                const std::ptrdiff_t hi =
                                    static_cast<std::ptrdiff_t>(ho * stride + i) -
                                    static_cast<std::ptrdiff_t>(pad);
                                if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t j = 0; j < kw; ++j) {
                                    const std::ptrdiff_t wi =
                                        static_cast<std::ptrdiff_t>(wo * stride + j) -
                                        static_cast<std::ptrdiff_t>(pad);
                                    if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(W)) continue;
                                    const std::size_t xi =
                                        (c * H + static_cast<std::size_t>(hi)) * W +
                                        static_cast<std::size_t>(wi);
                                    const std::size_t widx = ((co * C + c) * kh + i) * kw + j;
                                    if (gw) gw[widx] += g * px->value[xi];
                                    if (gx) gx[xi] += g * pw->value[widx];
                                }
                            }
                    }
        };
    }
    return Tensor(out);
}

// --- reductions ------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto out = make_node("sum", {1}, {s}, {x.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* px = x.node().get();
        out->backward_fn = [self, px]() {
            if (double* gx = grad_buf(px)) {
                const double g = self->grad[0];
                for (std::size_t i = 0; i < px->value.size(); ++i) gx[i] += g;
            }
        };
    }
    return Tensor(out);
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape("mse_loss", pred, target);
    const std::size_t n = pred.numel();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred.values()[i] - target.values()[i];
        s += d * d;
    }
    s /= static_cast<double>(n);
    auto out = make_node("mse_loss", {1}, {s}, {pred.node(), target.node()});
    if (out->requires_grad) {
        TensorNode* self = out.get();
        TensorNode* pp = pred.node().get();
        TensorNode* pt = target.node().get();
        out->backward_fn = [self, pp, pt, n]() {
            const double g = self->grad[0] * 2.0 / static_cast<double>(n);
            if (double* gp = grad_buf(pp))
                for (std::size_t i = 0; i < n; ++i)
                    gp[i] += g * (pp->value[i] - pt->value[i]);
            if (double* gt = grad_buf(pt))
                for (std::size_t i = 0; i < n; ++i)
                    gt[i] -= g * (pp->value[i] - pt->value[i]);
        };
    }
    return Tensor(out);
}

// --- optimizer ---------------------------------------------------------------------

void adam_step_scalar(double& p, double g, double& m, double& v, std::size_t t,
                      const AdamConfig& cfg) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
    const double vhat = v / (1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
    p -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        if (!p.defined() || !p.requires_grad())
            throw ValidationError("Adam: all parameters must require gradients");
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& val = params_[pi].values();
        const auto& grad = params_[pi].grad();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < val.size(); ++i)
            adam_step_scalar(val[i], grad[i], m[i], v[i], t_, cfg_);
        check_finite("adam_step", val);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

// --- gradient check ------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           double fd_step, double floor) {
    for (auto& p : params) p.zero_grad();
    Tensor loss = loss_fn();
    loss.backward();
    std::vector<std::vector<double>> ad;
    for (auto& p : params) ad.push_back(p.grad());

    GradCheckReport report;
    NoGradGuard guard;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + fd_step;
            const double lp = loss_fn().item();
            vals[i] = saved - fd_step;
            const double lm = loss_fn().item();
            vals[i] = saved;
            const double fd = (lp - lm) / (2.0 * fd_step);
            const double a = ad[pi][i];
            const double rel =
                std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
            ++report.n_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst =
                    "param" + std::to_string(pi) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

} // namespace dtc::nn
