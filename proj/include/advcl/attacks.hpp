#ifndef ADVCL_ATTACKS_HPP
#define ADVCL_ATTACKS_HPP

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "autograd.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace advcl {

enum class PerturbInit { zero, uniform_random };

[[nodiscard]] inline const char* to_string(PerturbInit i) { return i == PerturbInit::zero ? "zero" : "uniform_random"; }

[[nodiscard]] inline PerturbInit parse_perturb_init(const std::string& s)
{
    if (s == "zero") return PerturbInit::zero;
    if (s == "uniform_random" || s == "uniform" || s == "random") return PerturbInit::uniform_random;
    throw ConfigError("unknown attack init '" + s + "' (expected zero or uniform_random)");
}

// l_inf budget of a PGD attack.
struct PerturbBudget {
    Real epsilon = 8.0 / 255.0;
    std::size_t steps = 5;
    Real step_size = 2.0 / 255.0;
    PerturbInit init = PerturbInit::uniform_random;

    void validate() const
    {
        if (!(epsilon >= 0) || !std::isfinite(epsilon)) {
            throw ValidationError("attack epsilon must be a finite value >= 0");
        }
        if (steps > 0 && !(step_size > 0)) {
            throw ValidationError("attack step_size must be > 0 when steps > 0");
        }
    }

    [[nodiscard]] static PerturbBudget training(std::size_t steps = 5)
    {
        return {8.0 / 255.0, steps, 2.0 / 255.0, PerturbInit::uniform_random};
    }
    [[nodiscard]] static PerturbBudget evaluation(std::size_t steps = 20)
    {
        return {8.0 / 255.0, steps, 2.0 / 255.0, PerturbInit::zero};
    }
};

struct Perturbation {
    Tensor delta;
    std::vector<Real> losses;  // attack objective at each iterate before its update
};

// Normalization behaviour while an attack runs. Running statistics are never
// written by attack passes.
enum class AttackBnMode { eval, train };

[[nodiscard]] inline AttackBnMode parse_attack_bn_mode(const std::string& s)
{
    if (s == "eval") return AttackBnMode::eval;
    if (s == "train") return AttackBnMode::train;
    throw ConfigError("attack_bn_mode must be eval or train");
}

[[nodiscard]] inline ForwardOptions attack_options(BNRoute route, AttackBnMode mode)
{
    return {route, mode == AttackBnMode::train, false, false};
}

[[nodiscard]] inline Tensor apply_perturbation(const Tensor& x, const Tensor& delta)
{
    return clamp(x + delta, 0.0, 1.0);
}

// Objective over several perturbed inputs: returns the loss and the gradient
// w.r.t. each perturbed input.
using JointLossGrad = std::function<std::pair<Real, std::vector<Tensor>>(const std::vector<Tensor>&)>;
using LossGrad = std::function<std::pair<Real, Tensor>(const Tensor&)>;

// Sign-gradient ascent on jointly perturbed inputs, each projected onto its
// l_inf ball and onto [0,1]^n after every step.
[[nodiscard]] inline std::vector<Perturbation> pgd_joint(const JointLossGrad& objective, const std::vector<Tensor>& xs,
                                                         const PerturbBudget& budget, Rng& rng)
{
    budget.validate();
    const Real eps = budget.epsilon;
    std::vector<Tensor> delta, adv;
    for (const auto& x : xs) {
        if (!x.all_finite()) {
            throw ValidationError("attack input contains non-finite values");
        }
        Tensor d = budget.init == PerturbInit::uniform_random && eps > 0 ? uniform_tensor(x.shape(), -eps, eps, rng)
                                                                        : Tensor::zeros_like(x);
        Tensor a = apply_perturbation(x, d);
        delta.push_back(a - x);
        adv.push_back(std::move(a));
    }
    std::vector<Perturbation> out(xs.size());
    if (eps == 0) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
            out[i].delta = Tensor::zeros_like(xs[i]);
        }
        return out;
    }
    for (std::size_t step = 0; step < budget.steps; ++step) {
        auto [loss, grads] = objective(adv);
        if (grads.size() != xs.size()) {
            throw AttackError("attack objective returned " + std::to_string(grads.size()) + " gradients for " +
                              std::to_string(xs.size()) + " inputs");
        }
        for (auto& o : out) {
            o.losses.push_back(loss);
        }
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const Tensor& g = grads[i];
            if (!g.same_shape(xs[i])) {
                throw AttackError("attack gradient shape mismatch");
            }
            std::size_t bad = 0;
            for (Real v : g.values()) {
                bad += std::isfinite(v) ? 0 : 1;
            }
            if (bad > 0 || !std::isfinite(loss)) {
                throw AttackError("non-finite attack gradient at step " + std::to_string(step) + " (input " +
                                  std::to_string(i) + ", " + std::to_string(bad) + " bad entries, loss " +
                                  std::to_string(loss) + ")");
            }
            Tensor& d = delta[i];
            for (std::size_t k = 0; k < d.numel(); ++k) {
                const Real s = g[k] > 0 ? 1.0 : (g[k] < 0 ? -1.0 : 0.0);
                d[k] = std::clamp(d[k] + budget.step_size * s, -eps, eps);
            }
            adv[i] = apply_perturbation(xs[i], d);
            d = adv[i] - xs[i];
        }
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out[i].delta = std::move(delta[i]);
    }
    return out;
}

[[nodiscard]] inline Perturbation pgd(const LossGrad& objective, const Tensor& x, const PerturbBudget& budget, Rng& rng)
{
    JointLossGrad joint = [&objective](const std::vector<Tensor>& adv) {
        auto [loss, grad] = objective(adv.front());
        return std::pair<Real, std::vector<Tensor>>{loss, {std::move(grad)}};
    };
    auto res = pgd_joint(joint, {x}, budget, rng);
    return std::move(res.front());
}

namespace detail {

// Gradient of `loss(inputs)` w.r.t. each input tensor.
template <class Fn>
[[nodiscard]] std::pair<Real, std::vector<Tensor>> value_and_input_grads(const std::vector<Tensor>& inputs, Fn&& loss_fn)
{
    std::vector<ag::Var> leaves;
    for (const auto& t : inputs) {
        leaves.push_back(ag::Var::leaf(t, true));
    }
    ag::Var loss = loss_fn(leaves);
    ag::backward(loss);
    std::vector<Tensor> grads;
    for (const auto& l : leaves) {
        grads.push_back(l.grad().empty() ? Tensor::zeros_like(l.value()) : l.grad());
    }
    return {loss.item(), std::move(grads)};
}

} // namespace detail

struct ContrastiveAttackOptions {
    Temperature temperature{};
    AttackBnMode bn_mode = AttackBnMode::eval;
};

// Perturbation of the un-augmented image x that maximizes the 3-view
// contrastive loss over (t1x, t2x, x + delta). Only x is perturbed.
template <ProjectionModel M>
[[nodiscard]] Perturbation adv_view_3view(const M& model, const Tensor& x, const Tensor& t1x, const Tensor& t2x,
                                          const PerturbBudget& budget, Rng& rng,
                                          const ContrastiveAttackOptions& opts = {})
{
    if (!x.same_shape(t1x) || !x.same_shape(t2x)) {
        throw ValidationError("adv_view_3view: views must share the shape of x");
    }
    const auto clean = attack_options(BNRoute::normal, opts.bn_mode);
    const auto adv = attack_options(BNRoute::adv_cl, opts.bn_mode);
    ag::Var z1 = ag::Var::constant(model.forward_projection(ag::Var::constant(t1x), clean).value());
    ag::Var z2 = ag::Var::constant(model.forward_projection(ag::Var::constant(t2x), clean).value());
    LossGrad objective = [&](const Tensor& x_adv) {
        auto [loss, grads] = detail::value_and_input_grads({x_adv}, [&](const std::vector<ag::Var>& in) {
            return ntxent_multi_view({z1, z2, model.forward_projection(in[0], adv)}, opts.temperature);
        });
        return std::pair<Real, Tensor>{loss, std::move(grads.front())};
    };
    return pgd(objective, x, budget, rng);
}

// Joint perturbation of both augmented views maximizing their 2-view loss.
template <ProjectionModel M>
[[nodiscard]] std::pair<Perturbation, Perturbation> adv_view_paired(const M& model, const Tensor& t1x,
                                                                    const Tensor& t2x, const PerturbBudget& budget,
                                                                    Rng& rng, const ContrastiveAttackOptions& opts = {})
{
    if (!t1x.same_shape(t2x)) {
        throw ValidationError("adv_view_paired: views must share a shape");
    }
    const auto adv = attack_options(BNRoute::adv_cl, opts.bn_mode);
    JointLossGrad objective = [&](const std::vector<Tensor>& in) {
        return detail::value_and_input_grads(in, [&](const std::vector<ag::Var>& v) {
            return ntxent_two_view(model.forward_projection(v[0], adv), model.forward_projection(v[1], adv),
                                   opts.temperature);
        });
    };
    auto res = pgd_joint(objective, {t1x, t2x}, budget, rng);
    return {std::move(res[0]), std::move(res[1])};
}

// Single-sided variant: only the first view is perturbed.
template <ProjectionModel M>
[[nodiscard]] Perturbation adv_view_single(const M& model, const Tensor& t1x, const Tensor& t2x,
                                           const PerturbBudget& budget, Rng& rng,
                                           const ContrastiveAttackOptions& opts = {})
{
    const auto clean = attack_options(BNRoute::normal, opts.bn_mode);
    const auto adv = attack_options(BNRoute::adv_cl, opts.bn_mode);
    ag::Var z2 = ag::Var::constant(model.forward_projection(ag::Var::constant(t2x), clean).value());
    LossGrad objective = [&](const Tensor& x_adv) {
        auto [loss, grads] = detail::value_and_input_grads({x_adv}, [&](const std::vector<ag::Var>& in) {
            return ntxent_two_view(model.forward_projection(in[0], adv), z2, opts.temperature);
        });
        return std::pair<Real, Tensor>{loss, std::move(grads.front())};
    };
    return pgd(objective, t1x, budget, rng);
}

// Mean pseudo-label cross-entropy over the selected heads, for x routed through
// the adv_ce branch. labels[i] holds the pseudo labels of head head_indices[i].
template <PseudoLabelModel M>
[[nodiscard]] ag::Var pseudo_ce(const M& model, const ag::Var& x, const std::vector<std::vector<int>>& labels,
                                std::span<const std::size_t> head_indices, const ForwardOptions& o)
{
    if (labels.size() != head_indices.size() || head_indices.empty()) {
        throw ValidationError("pseudo_ce: need one label array per selected head");
    }
    ag::Var features = model.forward_features(x, o);
    ag::Var total;
    for (std::size_t i = 0; i < head_indices.size(); ++i) {
        ag::Var ce = cross_entropy(model.pseudo_logits_from_features(features, o, head_indices[i]), labels[i]);
        total = total.defined() ? total + ce : ce;
    }
    return total * (1.0 / static_cast<Real>(head_indices.size()));
}

template <PseudoLabelModel M>
[[nodiscard]] Perturbation adv_ce(const M& model, const Tensor& x, const std::vector<std::vector<int>>& pseudo_labels,
                                  const PerturbBudget& budget, std::span<const std::size_t> head_indices, Rng& rng,
                                  AttackBnMode bn_mode = AttackBnMode::eval)
{
    for (auto h : head_indices) {
        if (h >= model.num_pseudo_heads()) {
            throw ValidationError("adv_ce: head index " + std::to_string(h) + " out of range");
        }
    }
    const auto o = attack_options(BNRoute::adv_ce, bn_mode);
    LossGrad objective = [&](const Tensor& x_adv) {
        auto [loss, grads] = detail::value_and_input_grads({x_adv}, [&](const std::vector<ag::Var>& in) {
            return pseudo_ce(model, in[0], pseudo_labels, head_indices, o);
        });
        return std::pair<Real, Tensor>{loss, std::move(grads.front())};
    };
    return pgd(objective, x, budget, rng);
}

// True-label cross-entropy attack through the downstream classifier.
template <ClassifierModel M>
[[nodiscard]] Perturbation eval_attack(const M& model, const Tensor& x, std::span<const int> labels,
                                       const PerturbBudget& budget, Rng& rng,
                                       AttackBnMode bn_mode = AttackBnMode::eval)
{
    const auto o = attack_options(BNRoute::normal, bn_mode);
    std::vector<int> ys(labels.begin(), labels.end());
    LossGrad objective = [&](const Tensor& x_adv) {
        auto [loss, grads] = detail::value_and_input_grads({x_adv}, [&](const std::vector<ag::Var>& in) {
            return cross_entropy(model.forward_classifier(in[0], o), ys);
        });
        return std::pair<Real, Tensor>{loss, std::move(grads.front())};
    };
    return pgd(objective, x, budget, rng);
}

} // namespace advcl

#endif // ADVCL_ATTACKS_HPP
