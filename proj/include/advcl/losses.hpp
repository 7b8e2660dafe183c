#ifndef ADVCL_LOSSES_HPP
#define ADVCL_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "autograd.hpp"
#include "errors.hpp"
#include "tensor.hpp"

namespace advcl {

// Contrastive temperature, strictly positive.
class Temperature {
public:
    constexpr Temperature() = default;
    explicit Temperature(Real t) : t_(t)
    {
        if (!(t > 0) || !std::isfinite(t)) {
            throw ValidationError("temperature must be a positive finite number");
        }
    }
    [[nodiscard]] constexpr Real value() const noexcept { return t_; }

private:
    Real t_ = 0.5;
};

inline constexpr Real kNormGuard = 1e-12;

// Projected embeddings of m views of b samples. Row r belongs to sample
// sample_index[r] and view view_index[r].
struct ProjectedFeatures {
    Tensor z;  // [N, d]
    std::vector<std::size_t> view_index;
    std::vector<std::size_t> sample_index;

    // Stacks per-view [b, d] blocks in view-major order.
    [[nodiscard]] static ProjectedFeatures from_views(std::span<const Tensor> views)
    {
        ProjectedFeatures pf;
        pf.z = Tensor::concat_rows(views);
        for (std::size_t v = 0; v < views.size(); ++v) {
            for (std::size_t s = 0; s < views[v].dim(0); ++s) {
                pf.view_index.push_back(v);
                pf.sample_index.push_back(s);
            }
        }
        return pf;
    }

    [[nodiscard]] std::size_t num_views() const
    {
        return view_index.empty() ? 0 : *std::max_element(view_index.begin(), view_index.end()) + 1;
    }
    [[nodiscard]] std::size_t num_samples() const
    {
        return sample_index.empty() ? 0 : *std::max_element(sample_index.begin(), sample_index.end()) + 1;
    }

    void validate() const
    {
        if (z.rank() != 2 || z.dim(0) == 0 || z.dim(1) == 0) {
            throw ValidationError("projected features must be a non-empty [N, d] array");
        }
        const std::size_t N = z.dim(0);
        if (view_index.size() != N || sample_index.size() != N) {
            throw ValidationError("projected features: index arrays must have one entry per row");
        }
        const std::size_t m = num_views(), b = num_samples();
        if (m < 2) {
            throw ValidationError("multi-view contrastive loss needs at least 2 views");
        }
        if (N != b * m) {
            throw ValidationError("projected features: N must equal b * m");
        }
        std::vector<int> seen(N, 0);
        for (std::size_t r = 0; r < N; ++r) {
            if (seen[view_index[r] * b + sample_index[r]]++) {
                throw ValidationError("projected features: duplicate (view, sample) pair");
            }
        }
        if (!z.all_finite()) {
            throw ValidationError("projected features contain non-finite values");
        }
    }
};

namespace detail {

struct NtXentResult {
    Real loss = 0;
    Tensor grad;  // dloss/dz, only when requested
};

// Positives of row i: all other rows with the same sample index. Negatives
// (the denominator set): every row except i. Sum over anchors and positives
// of -log softmax, divided by the number of samples b.
[[nodiscard]] inline NtXentResult ntxent_core(const Tensor& z, std::span<const std::size_t> sample, std::size_t b,
                                             Real t, bool want_grad)
{
    const std::size_t N = z.dim(0), d = z.dim(1);
    std::vector<Real> norm(N);
    Tensor u(z.shape());
    for (std::size_t i = 0; i < N; ++i) {
        Real s = 0;
        for (std::size_t k = 0; k < d; ++k) {
            s += z.at(i, k) * z.at(i, k);
        }
        norm[i] = std::max(std::sqrt(s), kNormGuard);
        for (std::size_t k = 0; k < d; ++k) {
            u.at(i, k) = z.at(i, k) / norm[i];
        }
    }
    ag::MatR sim = ag::CMapR(u.data(), N, d) * ag::CMapR(u.data(), N, d).transpose() / t;

    NtXentResult r;
    ag::MatR g = ag::MatR::Zero(N, N);  // dloss/dsim, row-wise
    for (std::size_t i = 0; i < N; ++i) {
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t k = 0; k < N; ++k) {
            if (k != i) {
                mx = std::max(mx, sim(i, k));
            }
        }
        Real den = 0;
        for (std::size_t k = 0; k < N; ++k) {
            if (k != i) {
                den += std::exp(sim(i, k) - mx);
            }
        }
        const Real log_den = mx + std::log(den);
        std::size_t npos = 0;
        for (std::size_t j = 0; j < N; ++j) {
            if (j != i && sample[j] == sample[i]) {
                r.loss += log_den - sim(i, j);
                ++npos;
                if (want_grad) {
                    g(i, j) -= 1;
                }
            }
        }
        if (want_grad) {
            for (std::size_t k = 0; k < N; ++k) {
                if (k != i) {
                    g(i, k) += static_cast<Real>(npos) * std::exp(sim(i, k) - log_den);
                }
            }
        }
    }
    const Real inv_b = 1.0 / static_cast<Real>(b);
    r.loss *= inv_b;
    if (!want_grad) {
        return r;
    }
    // sim is symmetric in (i, j); dL/du = (G + G^T) u / (t b)
    ag::MatR sym = (g + g.transpose()) * (inv_b / t);
    ag::MatR du = sym * ag::CMapR(u.data(), N, d);
    r.grad = Tensor(z.shape());
    for (std::size_t i = 0; i < N; ++i) {
        Real dot = 0;
        for (std::size_t k = 0; k < d; ++k) {
            dot += u.at(i, k) * du(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        }
        const bool guarded = norm[i] <= kNormGuard;
        for (std::size_t k = 0; k < d; ++k) {
            const Real duk = du(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
            r.grad.at(i, k) = guarded ? duk / norm[i] : (duk - u.at(i, k) * dot) / norm[i];
        }
    }
    return r;
}

} // namespace detail

// Multi-view NT-Xent on an autograd variable whose rows are ordered view-major
// (row = view * b + sample).
[[nodiscard]] inline ag::Var ntxent(const ag::Var& z, std::size_t b, std::size_t m, Temperature t = {})
{
    if (z.shape().size() != 2 || b == 0 || z.shape()[0] != b * m || z.shape()[1] == 0) {
        throw ValidationError("ntxent: expected [b*m, d] embeddings, got " + shape_str(z.shape()));
    }
    if (m < 2) {
        throw ValidationError("ntxent: at least 2 views are required");
    }
    if (!z.value().all_finite()) {
        throw ValidationError("ntxent: non-finite embeddings");
    }
    std::vector<std::size_t> sample(b * m);
    for (std::size_t r = 0; r < b * m; ++r) {
        sample[r] = r % b;
    }
    auto res = detail::ntxent_core(z.value(), sample, b, t.value(), z.requires_grad());
    return ag::make_op(Tensor::scalar(res.loss), {z}, [grad = std::move(res.grad)](ag::Node& self) {
        if (ag::Node* p = ag::wants_grad(self, 0)) {
            p->accumulate(grad * self.grad.item());
        }
    });
}

[[nodiscard]] inline ag::Var ntxent_multi_view(const std::vector<ag::Var>& views, Temperature t = {})
{
    if (views.size() < 2) {
        throw ValidationError("ntxent_multi_view: at least 2 views are required");
    }
    const std::size_t b = views.front().shape().at(0);
    for (const auto& v : views) {
        if (v.shape() != views.front().shape()) {
            throw ValidationError("ntxent_multi_view: all views must have the same [b, d] shape");
        }
    }
    return ntxent(ag::concat_rows(views), b, views.size(), t);
}

[[nodiscard]] inline ag::Var ntxent_two_view(const ag::Var& z1, const ag::Var& z2, Temperature t = {})
{
    if (z1.shape().size() != 2 || z1.shape() != z2.shape() || z1.shape()[0] == 0 || z1.shape()[1] == 0) {
        throw ValidationError("ntxent_two_view: z1 and z2 must both be non-empty [b, d]");
    }
    return ntxent_multi_view({z1, z2}, t);
}

[[nodiscard]] inline Real ntxent_two_view(const Tensor& z1, const Tensor& z2, Temperature t = {})
{
    return ntxent_two_view(ag::Var::constant(z1), ag::Var::constant(z2), t).item();
}

[[nodiscard]] inline Real ntxent_multi_view(const ProjectedFeatures& zs, Temperature t = {})
{
    zs.validate();
    return detail::ntxent_core(zs.z, zs.sample_index, zs.num_samples(), t.value(), false).loss;
}

// ------------------------------------------------------------------ classification

[[nodiscard]] inline Tensor log_softmax_rows(const Tensor& logits)
{
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < B; ++i) {
        Real mx = logits.at(i, 0);
        for (std::size_t k = 1; k < K; ++k) {
            mx = std::max(mx, logits.at(i, k));
        }
        Real s = 0;
        for (std::size_t k = 0; k < K; ++k) {
            s += std::exp(logits.at(i, k) - mx);
        }
        const Real lse = mx + std::log(s);
        for (std::size_t k = 0; k < K; ++k) {
            out.at(i, k) = logits.at(i, k) - lse;
        }
    }
    return out;
}

inline void validate_labels(const Tensor& logits, std::span<const int> labels)
{
    if (logits.rank() != 2 || logits.dim(0) == 0 || logits.dim(1) == 0) {
        throw ValidationError("logits must be a non-empty [B, K] array, got " + shape_str(logits.shape()));
    }
    if (labels.size() != logits.dim(0)) {
        throw ValidationError("label count does not match batch size");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1)) {
            throw ValidationError("label " + std::to_string(y) + " outside [0, " + std::to_string(logits.dim(1)) + ")");
        }
    }
}

// Mean over the batch of -log softmax(logits)[label].
[[nodiscard]] inline ag::Var cross_entropy(const ag::Var& logits, std::span<const int> labels)
{
    validate_labels(logits.value(), labels);
    const std::size_t B = logits.shape()[0], K = logits.shape()[1];
    Tensor lsm = log_softmax_rows(logits.value());
    Real loss = 0;
    for (std::size_t i = 0; i < B; ++i) {
        loss -= lsm.at(i, static_cast<std::size_t>(labels[i]));
    }
    loss /= static_cast<Real>(B);
    std::vector<int> ys(labels.begin(), labels.end());
    return ag::make_op(Tensor::scalar(loss), {logits}, [lsm = std::move(lsm), ys = std::move(ys), B, K](ag::Node& self) {
        if (ag::Node* p = ag::wants_grad(self, 0)) {
            const Real s = self.grad.item() / static_cast<Real>(B);
            Tensor g(Shape{B, K});
            for (std::size_t i = 0; i < B; ++i) {
                for (std::size_t k = 0; k < K; ++k) {
                    g.at(i, k) = s * (std::exp(lsm.at(i, k)) - (static_cast<int>(k) == ys[i] ? 1 : 0));
                }
            }
            p->accumulate(g);
        }
    });
}

[[nodiscard]] inline Real cross_entropy(const Tensor& logits, std::span<const int> labels)
{
    return cross_entropy(ag::Var::constant(logits), labels).item();
}

// Mean over the batch of KL(softmax(p_logits) || softmax(q_logits)).
[[nodiscard]] inline ag::Var kl_divergence(const ag::Var& p_logits, const ag::Var& q_logits)
{
    if (p_logits.shape() != q_logits.shape() || p_logits.shape().size() != 2 || p_logits.shape()[0] == 0) {
        throw ValidationError("kl_divergence: logits shapes must match and be [B, K]");
    }
    const std::size_t B = p_logits.shape()[0], K = p_logits.shape()[1];
    Tensor lp = log_softmax_rows(p_logits.value());
    Tensor lq = log_softmax_rows(q_logits.value());
    std::vector<Real> row_kl(B, 0);
    Real total = 0;
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            row_kl[i] += std::exp(lp.at(i, k)) * (lp.at(i, k) - lq.at(i, k));
        }
        total += row_kl[i];
    }
    total /= static_cast<Real>(B);
    return ag::make_op(Tensor::scalar(total), {p_logits, q_logits},
                       [lp = std::move(lp), lq = std::move(lq), row_kl = std::move(row_kl), B, K](ag::Node& self) {
                           const Real s = self.grad.item() / static_cast<Real>(B);
                           if (ag::Node* pp = ag::wants_grad(self, 0)) {
                               Tensor g(Shape{B, K});
                               for (std::size_t i = 0; i < B; ++i) {
                                   for (std::size_t k = 0; k < K; ++k) {
                                       const Real pk = std::exp(lp.at(i, k));
                                       g.at(i, k) = s * pk * (lp.at(i, k) - lq.at(i, k) - row_kl[i]);
                                   }
                               }
                               pp->accumulate(g);
                           }
                           if (ag::Node* pq = ag::wants_grad(self, 1)) {
                               Tensor g(Shape{B, K});
                               for (std::size_t i = 0; i < B; ++i) {
                                   for (std::size_t k = 0; k < K; ++k) {
                                       g.at(i, k) = s * (std::exp(lq.at(i, k)) - std::exp(lp.at(i, k)));
                                   }
                               }
                               pq->accumulate(g);
                           }
                       });
}

inline constexpr Real kDefaultTradesBeta = 6.0;

// CE on clean logits plus beta * KL(clean || adversarial).
[[nodiscard]] inline ag::Var trades_loss(const ag::Var& logits_clean, const ag::Var& logits_adv,
                                         std::span<const int> labels, Real beta = kDefaultTradesBeta)
{
    if (!(beta >= 0)) {
        throw ValidationError("trades beta must be >= 0");
    }
    validate_labels(logits_adv.value(), labels);
    ag::Var ce = cross_entropy(logits_clean, labels);
    if (beta == 0) {
        return ce;
    }
    return ce + beta * kl_divergence(logits_clean, logits_adv);
}

} // namespace advcl

#endif // ADVCL_LOSSES_HPP
