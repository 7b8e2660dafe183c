#ifndef ADVCL_ANALYSIS_HPP
#define ADVCL_ANALYSIS_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "attacks.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "random.hpp"

namespace advcl {

enum class FimSign { min, max };

[[nodiscard]] inline FimSign parse_fim_sign(const std::string& s)
{
    if (s == "min") return FimSign::min;
    if (s == "max") return FimSign::max;
    throw ConfigError("fim sign must be min or max");
}

struct FimOptions {
    std::size_t max_halvings = 20;  // backtracking attempts per step
};

struct FimResult {
    Tensor image;                    // [1, C, H, W], inside [0,1]
    std::vector<Real> trajectory;    // feature coordinate at the seed and after each accepted step
    std::size_t accepted_steps = 0;
};

// Drives one feature coordinate down (min) or up (max) by projected gradient
// descent from x0. A step is accepted only if it improves the objective;
// otherwise the step length is halved.
[[nodiscard]] inline FimResult fim(const RobustModel& model, const Tensor& x0, std::size_t unit_index,
                                   std::size_t steps, Real lr, FimSign sign, const FimOptions& opts = {})
{
    model.check_input(x0);
    if (x0.dim(0) != 1) {
        throw ValidationError("fim expects a single image [1, C, H, W]");
    }
    if (unit_index >= model.config().feature_dim) {
        throw ValidationError("fim unit index " + std::to_string(unit_index) + " >= feature_dim " +
                              std::to_string(model.config().feature_dim));
    }
    if (!(lr > 0)) {
        throw ValidationError("fim lr must be > 0");
    }
    const Real s = sign == FimSign::min ? 1.0 : -1.0;
    const auto o = ForwardOptions::eval();
    auto coord = [&](const Tensor& x) {
        return model.forward_features(ag::Var::constant(x), o).value()[unit_index];
    };
    FimResult r;
    r.image = clamp(x0, 0.0, 1.0);
    Real current = coord(r.image);
    r.trajectory.push_back(current);
    for (std::size_t it = 0; it < steps; ++it) {
        ag::Var xv = ag::Var::leaf(r.image, true);
        ag::Var f = model.forward_features(xv, o);
        Tensor seed = Tensor::zeros_like(f.value());
        seed[unit_index] = 1.0;
        ag::backward(f, seed);
        const Tensor g = xv.grad().empty() ? Tensor::zeros_like(r.image) : xv.grad();
        if (g.max_abs() == 0) {
            break;
        }
        Real step = lr;
        bool accepted = false;
        for (std::size_t h = 0; h <= opts.max_halvings; ++h, step *= 0.5) {
            Tensor cand = r.image;
            cand.axpy(-s * step, g);
            cand = clamp(std::move(cand), 0.0, 1.0);
            const Real v = coord(cand);
            if (s * v < s * current) {
                r.image = std::move(cand);
                current = v;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            break;
        }
        r.trajectory.push_back(current);
        ++r.accepted_steps;
    }
    return r;
}

struct LandscapeSpec {
    std::vector<Real> alphas{0};
    std::vector<Real> betas{0};

    [[nodiscard]] static std::vector<Real> linspace(Real lo, Real hi, std::size_t n)
    {
        std::vector<Real> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<Real>(i) / static_cast<Real>(n - 1);
        }
        return v;
    }
};

struct LandscapeGrid {
    std::vector<Real> alphas;
    std::vector<Real> betas;
    Tensor losses;  // [alphas, betas]
    std::uint64_t seed = 0;
    std::vector<Tensor> d1, d2;  // directions, one tensor per parameter
    std::vector<std::string> warnings;
};

// Random direction matched filter-wise (slices along dim 0) to the weight's
// norms. Biases and normalization parameters (rank <= 1) get a zero direction.
[[nodiscard]] inline Tensor filter_normalized_direction(const Tensor& w, Rng& rng)
{
    if (w.rank() <= 1) {
        return Tensor::zeros_like(w);
    }
    Tensor d = normal_tensor(w.shape(), 0.0, 1.0, rng);
    const std::size_t rows = w.dim(0), per = w.numel() / rows;
    for (std::size_t r = 0; r < rows; ++r) {
        Real wn = 0, dn = 0;
        for (std::size_t k = 0; k < per; ++k) {
            wn += w[r * per + k] * w[r * per + k];
            dn += d[r * per + k] * d[r * per + k];
        }
        const Real scale = dn > 0 ? std::sqrt(wn) / std::sqrt(dn) : 0.0;
        for (std::size_t k = 0; k < per; ++k) {
            d[r * per + k] *= scale;
        }
    }
    return d;
}

// Evaluates loss_fn on the plane w0 + a*d1 + b*d2 over the given grid and puts
// the exact original values back afterwards.
[[nodiscard]] inline LandscapeGrid landscape_scan(const std::vector<Parameter*>& params,
                                                  const std::function<Real()>& loss_fn, const LandscapeSpec& spec,
                                                  std::uint64_t seed)
{
    if (spec.alphas.empty() || spec.betas.empty()) {
        throw ValidationError("landscape grid must be non-empty");
    }
    LandscapeGrid g;
    g.alphas = spec.alphas;
    g.betas = spec.betas;
    g.seed = seed;
    Rng rng = make_rng(seed, {0x1A5Du});
    std::vector<Tensor> original;
    for (auto* p : params) {
        original.push_back(p->value());
        g.d1.push_back(filter_normalized_direction(p->value(), rng));
    }
    for (auto* p : params) {
        g.d2.push_back(filter_normalized_direction(p->value(), rng));
    }
    g.losses = Tensor(Shape{spec.alphas.size(), spec.betas.size()});
    std::size_t bad = 0;
    for (std::size_t i = 0; i < spec.alphas.size(); ++i) {
        for (std::size_t j = 0; j < spec.betas.size(); ++j) {
            for (std::size_t k = 0; k < params.size(); ++k) {
                Tensor w = original[k];
                w.axpy(spec.alphas[i], g.d1[k]);
                w.axpy(spec.betas[j], g.d2[k]);
                params[k]->value() = std::move(w);
            }
            Real v = std::numeric_limits<Real>::quiet_NaN();
            try {
                v = loss_fn();
            } catch (const AttackError&) {
                v = std::numeric_limits<Real>::quiet_NaN();
            }
            if (!std::isfinite(v)) {
                v = std::numeric_limits<Real>::quiet_NaN();
                ++bad;
            }
            g.losses.at(i, j) = v;
        }
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        params[k]->value() = original[k];
    }
    if (bad > 0) {
        g.warnings.push_back(std::to_string(bad) + " landscape cells produced non-finite losses (stored as NaN)");
    }
    return g;
}

// Adversarial CE (fresh attack per cell) over a filter-normalized plane in the
// encoder + classifier weight space.
[[nodiscard]] inline LandscapeGrid loss_landscape(RobustModel& model, const Tensor& images, std::span<const int> labels,
                                                  const PerturbBudget& budget, const LandscapeSpec& spec,
                                                  std::uint64_t seed)
{
    if (!model.has_classifier()) {
        throw StateError("loss landscape needs a classifier head");
    }
    std::vector<Parameter*> params = model.encoder_parameters();
    for (auto* p : model.classifier_parameters()) {
        params.push_back(p);
    }
    std::vector<int> ys(labels.begin(), labels.end());
    auto loss_fn = [&]() {
        Rng rng = make_rng(seed, {0xA77Au});
        auto d = eval_attack(model, images, ys, budget, rng);
        return cross_entropy(
            model.forward_classifier(ag::Var::constant(apply_perturbation(images, d.delta))).value(), ys);
    };
    return landscape_scan(params, loss_fn, spec, seed);
}

} // namespace advcl

#endif // ADVCL_ANALYSIS_HPP
