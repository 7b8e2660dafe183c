#ifndef ADVCL_AUTOGRAD_HPP
#define ADVCL_AUTOGRAD_HPP

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tensor.hpp"

// Minimal dynamic reverse-mode differentiation. A forward pass builds a DAG of
// Nodes; backward() walks it once in reverse topological order. Nodes that do
// not require gradients carry no parents and no closure, so constant subgraphs
// cost nothing at backward time.
namespace advcl::ag {

using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void accumulate(const Tensor& g)
    {
        if (grad.empty()) {
            grad = g;
        } else {
            grad += g;
        }
    }

    Tensor& grad_buffer()
    {
        if (grad.empty()) {
            grad = Tensor::zeros_like(value);
        }
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    [[nodiscard]] static Var constant(Tensor v)
    {
        auto n = std::make_shared<Node>();
        n->value = std::move(v);
        return Var(std::move(n));
    }

    [[nodiscard]] static Var leaf(Tensor v, bool requires_grad = true)
    {
        auto n = std::make_shared<Node>();
        n->value = std::move(v);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }

    [[nodiscard]] const Tensor& value() const { return node_->value; }
    [[nodiscard]] const Tensor& grad() const { return node_->grad; }
    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
    [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
    [[nodiscard]] Real item() const { return node_->value.item(); }
    [[nodiscard]] const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

[[nodiscard]] inline Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& in : inputs) {
        if (in.requires_grad()) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        n->parents.reserve(inputs.size());
        for (auto& in : inputs) {
            n->parents.push_back(in.node());
        }
        n->backward_fn = std::move(fn);
    }
    return Var(std::move(n));
}

// Parent i of a node, or nullptr when it needs no gradient.
[[nodiscard]] inline Node* wants_grad(Node& self, std::size_t i)
{
    Node* p = self.parents[i].get();
    return (p && p->requires_grad) ? p : nullptr;
}

// Runs reverse accumulation from `root`. A scalar root is seeded with 1;
// otherwise `seed` must match the root's shape. Gradients accumulate into
// leaves (parameters, inputs); intermediate buffers are released as soon as
// they have been propagated.
inline void backward(const Var& root, const Tensor& seed = {})
{
    if (!root.requires_grad()) {
        return;
    }
    // Owning references keep every queued node alive while parents are released.
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            std::shared_ptr<Node> p = n->parents[idx++];
            if (p && p->requires_grad && seen.insert(p.get()).second) {
                stack.emplace_back(std::move(p), 0);
            }
        } else {
            order.push_back(std::move(n));
            stack.pop_back();
        }
    }
    Node* r = root.node().get();
    if (seed.empty()) {
        if (r->value.numel() != 1) {
            throw ValidationError("backward() without seed requires a scalar root, got " +
                                  shape_str(r->value.shape()));
        }
        r->accumulate(Tensor(r->value.shape(), Real{1}));
    } else {
        if (!seed.same_shape(r->value)) {
            throw ValidationError("backward seed shape mismatch");
        }
        r->accumulate(seed);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = it->get();
        if (!n->backward_fn) {
            continue;
        }
        if (!n->grad.empty()) {
            n->backward_fn(*n);
        }
        n->backward_fn = nullptr;
        n->parents.clear();
        n->grad = Tensor();
    }
}

// ---------------------------------------------------------------- elementwise

[[nodiscard]] inline Var add(const Var& a, const Var& b)
{
    Tensor out = a.value() + b.value();
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t i = 0; i < 2; ++i) {
            if (Node* p = wants_grad(self, i)) {
                p->accumulate(self.grad);
            }
        }
    });
}

[[nodiscard]] inline Var scale(const Var& a, Real s)
{
    return make_op(a.value() * s, {a}, [s](Node& self) {
        if (Node* p = wants_grad(self, 0)) {
            p->accumulate(self.grad * s);
        }
    });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator*(const Var& a, Real s) { return scale(a, s); }
inline Var operator*(Real s, const Var& a) { return scale(a, s); }

[[nodiscard]] inline Var relu(const Var& x)
{
    Tensor out = x.value();
    for (Real& v : out.values()) {
        v = v > 0 ? v : 0;
    }
    return make_op(std::move(out), {x}, [](Node& self) {
        if (Node* p = wants_grad(self, 0)) {
            Tensor g = self.grad;
            const Tensor& in = p->value;
            for (std::size_t i = 0; i < g.numel(); ++i) {
                if (!(in[i] > 0)) {
                    g[i] = 0;
                }
            }
            p->accumulate(g);
        }
    });
}

[[nodiscard]] inline Var reshape(const Var& x, Shape shape)
{
    Shape original = x.shape();
    return make_op(x.value().reshaped(std::move(shape)), {x}, [original](Node& self) {
        if (Node* p = wants_grad(self, 0)) {
            p->accumulate(self.grad.reshaped(original));
        }
    });
}

// Sum over all elements of x weighted by a constant tensor of the same shape.
[[nodiscard]] inline Var weighted_sum(const Var& x, const Tensor& w)
{
    if (!x.value().same_shape(w)) {
        throw ValidationError("weighted_sum shape mismatch");
    }
    Real s = 0;
    for (std::size_t i = 0; i < w.numel(); ++i) {
        s += x.value()[i] * w[i];
    }
    return make_op(Tensor::scalar(s), {x}, [w](Node& self) {
        if (Node* p = wants_grad(self, 0)) {
            p->accumulate(w * self.grad.item());
        }
    });
}

[[nodiscard]] inline Var concat_rows(const std::vector<Var>& parts)
{
    std::vector<Tensor> values;
    values.reserve(parts.size());
    for (const auto& p : parts) {
        values.push_back(p.value());
    }
    Tensor out = Tensor::concat_rows(values);
    std::vector<std::size_t> rows;
    for (const auto& p : parts) {
        rows.push_back(p.shape().at(0));
    }
    return make_op(std::move(out), parts, [rows](Node& self) {
        std::size_t begin = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (Node* p = wants_grad(self, i)) {
                p->accumulate(self.grad.slice_rows(begin, begin + rows[i]));
            }
            begin += rows[i];
        }
    });
}

// ---------------------------------------------------------------- linear algebra

// x [B, F], w [O, F], b [O] (may be undefined) -> [B, O]
[[nodiscard]] inline Var linear(const Var& x, const Var& w, const Var& b)
{
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) {
        throw ValidationError("linear: incompatible shapes " + shape_str(xs) + " x " + shape_str(ws));
    }
    const std::size_t B = xs[0], F = xs[1], O = ws[0];
    Tensor out(Shape{B, O});
    MapR(out.data(), B, O).noalias() = CMapR(x.value().data(), B, F) * CMapR(w.value().data(), O, F).transpose();
    const bool has_bias = b.defined();
    if (has_bias) {
        if (b.shape() != Shape{O}) {
            throw ValidationError("linear: bias shape mismatch");
        }
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t o = 0; o < O; ++o) {
                out[i * O + o] += b.value()[o];
            }
        }
    }
    std::vector<Var> inputs{x, w};
    if (has_bias) {
        inputs.push_back(b);
    }
    return make_op(std::move(out), std::move(inputs), [B, F, O, has_bias](Node& self) {
        CMapR dy(self.grad.data(), B, O);
        if (Node* px = wants_grad(self, 0)) {
            Tensor dx(px->value.shape());
            MapR(dx.data(), B, F).noalias() = dy * CMapR(self.parents[1]->value.data(), O, F);
            px->accumulate(dx);
        }
        if (Node* pw = wants_grad(self, 1)) {
            MapR(pw->grad_buffer().data(), O, F).noalias() += dy.transpose() * CMapR(self.parents[0]->value.data(), B, F);
        }
        if (has_bias) {
            if (Node* pb = wants_grad(self, 2)) {
                Tensor& g = pb->grad_buffer();
                for (std::size_t i = 0; i < B; ++i) {
                    for (std::size_t o = 0; o < O; ++o) {
                        g[o] += self.grad[i * O + o];
                    }
                }
            }
        }
    });
}

struct Conv2dSpec {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

namespace detail {

inline void im2col(const Real* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t stride,
                   std::size_t pad, std::size_t Ho, std::size_t Wo, Real* cols)
{
    const std::size_t HW = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) {
                Real* row = cols + ((c * k + ki) * k + kj) * HW;
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
                    Real* dst = row + oh * Wo;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
                        std::fill(dst, dst + Wo, Real{0});
                        continue;
                    }
                    const Real* src = x + (c * H + static_cast<std::size_t>(ih)) * W;
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
                        dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) ? Real{0} : src[iw];
                    }
                }
            }
        }
    }
}

inline void col2im(const Real* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t stride,
                   std::size_t pad, std::size_t Ho, std::size_t Wo, Real* dx)
{
    const std::size_t HW = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) {
                const Real* row = cols + ((c * k + ki) * k + kj) * HW;
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
                        continue;
                    }
                    Real* dst = dx + (c * H + static_cast<std::size_t>(ih)) * W;
                    const Real* src = row + oh * Wo;
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
                        if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(W)) {
                            dst[iw] += src[ow];
                        }
                    }
                }
            }
        }
    }
}

} // namespace detail

// x [B, C, H, W], w [O, C, k, k], b [O] (may be undefined) -> [B, O, Ho, Wo]
[[nodiscard]] inline Var conv2d(const Var& x, const Var& w, const Var& b, Conv2dSpec spec = {})
{
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1] || ws[2] != ws[3]) {
        throw ValidationError("conv2d: incompatible shapes " + shape_str(xs) + " * " + shape_str(ws));
    }
    const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const std::size_t O = ws[0], k = ws[2], s = spec.stride, p = spec.padding;
    if (H + 2 * p < k || W + 2 * p < k || s == 0) {
        throw ValidationError("conv2d: kernel larger than padded input");
    }
    const std::size_t Ho = (H + 2 * p - k) / s + 1, Wo = (W + 2 * p - k) / s + 1;
    const std::size_t CKK = C * k * k, HW = Ho * Wo;

    auto cols = std::make_shared<std::vector<Real>>(B * CKK * HW);
    Tensor out(Shape{B, O, Ho, Wo});
    CMapR wm(w.value().data(), O, CKK);
    for (std::size_t n = 0; n < B; ++n) {
        Real* cn = cols->data() + n * CKK * HW;
        detail::im2col(x.value().data() + n * C * H * W, C, H, W, k, s, p, Ho, Wo, cn);
        MapR(out.data() + n * O * HW, O, HW).noalias() = wm * CMapR(cn, CKK, HW);
    }
    const bool has_bias = b.defined();
    if (has_bias) {
        for (std::size_t n = 0; n < B; ++n) {
            for (std::size_t o = 0; o < O; ++o) {
                Real* dst = out.data() + (n * O + o) * HW;
                const Real bo = b.value()[o];
                for (std::size_t i = 0; i < HW; ++i) {
                    dst[i] += bo;
                }
            }
        }
    }
    std::vector<Var> inputs{x, w};
    if (has_bias) {
        inputs.push_back(b);
    }
    return make_op(std::move(out), std::move(inputs), [=](Node& self) {
        Node* px = wants_grad(self, 0);
        Node* pw = wants_grad(self, 1);
        Node* pb = has_bias ? wants_grad(self, 2) : nullptr;
        CMapR wmat(self.parents[1]->value.data(), O, CKK);
        Tensor dx;
        if (px) {
            dx = Tensor(px->value.shape());
        }
        MatR dcols;
        for (std::size_t n = 0; n < B; ++n) {
            CMapR dy(self.grad.data() + n * O * HW, O, HW);
            const Real* cn = cols->data() + n * CKK * HW;
            if (pw) {
                MapR(pw->grad_buffer().data(), O, CKK).noalias() += dy * CMapR(cn, CKK, HW).transpose();
            }
            if (pb) {
                Tensor& g = pb->grad_buffer();
                for (std::size_t o = 0; o < O; ++o) {
                    g[o] += dy.row(static_cast<Eigen::Index>(o)).sum();
                }
            }
            if (px) {
                dcols.noalias() = wmat.transpose() * dy;
                detail::col2im(dcols.data(), C, H, W, k, s, p, Ho, Wo, dx.data() + n * C * H * W);
            }
        }
        if (px) {
            px->accumulate(dx);
        }
    });
}

// ---------------------------------------------------------------- normalization

struct RunningStats {
    Tensor mean;
    Tensor var;
};

struct BatchNormMode {
    bool use_batch_stats = true;  // false: normalize with running statistics
    bool update_running = true;   // only meaningful with batch stats
    Real momentum = 0.1;
    Real eps = 1e-5;
};

// Per-channel normalization for x of shape [B, C] or [B, C, H, W].
[[nodiscard]] inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, RunningStats& stats,
                                    const BatchNormMode& mode)
{
    const auto& xs = x.shape();
    if (xs.size() != 2 && xs.size() != 4) {
        throw ValidationError("batch_norm expects rank 2 or 4 input, got " + shape_str(xs));
    }
    const std::size_t B = xs[0], C = xs[1];
    const std::size_t S = xs.size() == 4 ? xs[2] * xs[3] : 1;
    const std::size_t n = B * S;
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
        throw ValidationError("batch_norm affine shape mismatch");
    }
    const Tensor& in = x.value();
    Tensor xhat(xs);
    Tensor out(xs);
    std::vector<Real> inv_std(C);
    for (std::size_t c = 0; c < C; ++c) {
        Real mean = 0, var = 0;
        if (mode.use_batch_stats) {
            for (std::size_t b = 0; b < B; ++b) {
                const Real* src = in.data() + (b * C + c) * S;
                for (std::size_t i = 0; i < S; ++i) {
                    mean += src[i];
                }
            }
            mean /= static_cast<Real>(n);
            for (std::size_t b = 0; b < B; ++b) {
                const Real* src = in.data() + (b * C + c) * S;
                for (std::size_t i = 0; i < S; ++i) {
                    const Real d = src[i] - mean;
                    var += d * d;
                }
            }
            var /= static_cast<Real>(n);
            if (mode.update_running) {
                const Real unbiased = n > 1 ? var * static_cast<Real>(n) / static_cast<Real>(n - 1) : var;
                stats.mean[c] = (1 - mode.momentum) * stats.mean[c] + mode.momentum * mean;
                stats.var[c] = (1 - mode.momentum) * stats.var[c] + mode.momentum * unbiased;
            }
        } else {
            mean = stats.mean[c];
            var = stats.var[c];
        }
        inv_std[c] = 1 / std::sqrt(var + mode.eps);
        const Real g = gamma.value()[c], bt = beta.value()[c];
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * S;
            for (std::size_t i = 0; i < S; ++i) {
                const Real h = (in[off + i] - mean) * inv_std[c];
                xhat[off + i] = h;
                out[off + i] = g * h + bt;
            }
        }
    }
    const bool batch = mode.use_batch_stats;
    return make_op(std::move(out), {x, gamma, beta},
                   [B, C, S, n, batch, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node* px = wants_grad(self, 0);
                       Node* pg = wants_grad(self, 1);
                       Node* pb = wants_grad(self, 2);
                       const Tensor& dy = self.grad;
                       const Tensor& g = self.parents[1]->value;
                       Tensor dx;
                       if (px) {
                           dx = Tensor(px->value.shape());
                       }
                       for (std::size_t c = 0; c < C; ++c) {
                           Real sum_dy = 0, sum_dy_xhat = 0;
                           for (std::size_t b = 0; b < B; ++b) {
                               const std::size_t off = (b * C + c) * S;
                               for (std::size_t i = 0; i < S; ++i) {
                                   sum_dy += dy[off + i];
                                   sum_dy_xhat += dy[off + i] * xhat[off + i];
                               }
                           }
                           if (pg) {
                               pg->grad_buffer()[c] += sum_dy_xhat;
                           }
                           if (pb) {
                               pb->grad_buffer()[c] += sum_dy;
                           }
                           if (!px) {
                               continue;
                           }
                           const Real k = g[c] * inv_std[c];
                           const Real nn = static_cast<Real>(n);
                           for (std::size_t b = 0; b < B; ++b) {
                               const std::size_t off = (b * C + c) * S;
                               for (std::size_t i = 0; i < S; ++i) {
                                   dx[off + i] = batch ? k * (dy[off + i] - sum_dy / nn - xhat[off + i] * sum_dy_xhat / nn)
                                                       : k * dy[off + i];
                               }
                           }
                       }
                       if (px) {
                           px->accumulate(dx);
                       }
                   });
}

// ---------------------------------------------------------------- pooling

[[nodiscard]] inline Var max_pool2d(const Var& x, std::size_t k = 2)
{
    const auto& xs = x.shape();
    if (xs.size() != 4 || xs[2] < k || xs[3] < k) {
        throw ValidationError("max_pool2d: bad input " + shape_str(xs));
    }
    const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const std::size_t Ho = H / k, Wo = W / k;
    Tensor out(Shape{B, C, Ho, Wo});
    std::vector<std::size_t> argmax(out.numel());
    const Tensor& in = x.value();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const Real* src = in.data() + bc * H * W;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
            for (std::size_t ow = 0; ow < Wo; ++ow) {
                std::size_t best = (oh * k) * W + ow * k;
                for (std::size_t i = 0; i < k; ++i) {
                    for (std::size_t j = 0; j < k; ++j) {
                        const std::size_t idx = (oh * k + i) * W + ow * k + j;
                        if (src[idx] > src[best]) {
                            best = idx;
                        }
                    }
                }
                const std::size_t o = (bc * Ho + oh) * Wo + ow;
                out[o] = src[best];
                argmax[o] = bc * H * W + best;
            }
        }
    }
    return make_op(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
        if (Node* p = wants_grad(self, 0)) {
            Tensor dx(p->value.shape());
            for (std::size_t o = 0; o < argmax.size(); ++o) {
                dx[argmax[o]] += self.grad[o];
            }
            p->accumulate(dx);
        }
    });
}

// [B, C, H, W] -> [B, C]
[[nodiscard]] inline Var global_avg_pool(const Var& x)
{
    const auto& xs = x.shape();
    if (xs.size() != 4) {
        throw ValidationError("global_avg_pool: expected rank 4, got " + shape_str(xs));
    }
    const std::size_t B = xs[0], C = xs[1], S = xs[2] * xs[3];
    Tensor out(Shape{B, C});
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        Real s = 0;
        for (std::size_t i = 0; i < S; ++i) {
            s += x.value()[bc * S + i];
        }
        out[bc] = s / static_cast<Real>(S);
    }
    return make_op(std::move(out), {x}, [B, C, S](Node& self) {
        if (Node* p = wants_grad(self, 0)) {
            Tensor dx(p->value.shape());
            for (std::size_t bc = 0; bc < B * C; ++bc) {
                const Real g = self.grad[bc] / static_cast<Real>(S);
                for (std::size_t i = 0; i < S; ++i) {
                    dx[bc * S + i] = g;
                }
            }
            p->accumulate(dx);
        }
    });
}

} // namespace advcl::ag

#endif // ADVCL_AUTOGRAD_HPP
