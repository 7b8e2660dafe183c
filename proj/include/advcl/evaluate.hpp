#ifndef ADVCL_EVALUATE_HPP
#define ADVCL_EVALUATE_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attacks.hpp"
#include "data.hpp"
#include "io.hpp"
#include "losses.hpp"
#include "model.hpp"

namespace advcl {

struct EvalOptions {
    Real step_size = 2.0 / 255.0;
    PerturbInit init = PerturbInit::zero;
    std::uint64_t seed = 0;
    std::size_t batch_size = 256;
    AttackBnMode bn_mode = AttackBnMode::eval;
    Real screen_tolerance = 0.005;  // allowed RA increase before a sweep warning
};

namespace detail {

[[nodiscard]] inline std::size_t count_correct(const Tensor& logits, std::span<const int> labels)
{
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < B; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k) {
            if (logits.at(i, k) > logits.at(i, best)) {
                best = k;
            }
        }
        correct += static_cast<int>(best) == labels[i] ? 1 : 0;
    }
    return correct;
}

} // namespace detail

// Fraction of argmax-correct predictions on clean inputs (eval mode, normal route).
template <ClassifierModel M>
[[nodiscard]] Real eval_sa(const M& model, const Tensor& images, std::span<const int> labels,
                           std::size_t batch_size = 256)
{
    validate_image_batch(images, "evaluation images");
    const std::size_t n = images.dim(0);
    if (labels.size() != n) {
        throw ValidationError("evaluation labels must match the number of images");
    }
    std::size_t correct = 0;
    for (std::size_t b = 0; b < n; b += batch_size) {
        const std::size_t e = std::min(n, b + batch_size);
        const Tensor logits =
            model.forward_classifier(ag::Var::constant(images.slice_rows(b, e)), ForwardOptions::eval()).value();
        correct += detail::count_correct(logits, labels.subspan(b, e - b));
    }
    return static_cast<Real>(correct) / static_cast<Real>(n);
}

template <ClassifierModel M>
[[nodiscard]] Real eval_sa(const M& model, const Dataset& data, std::size_t batch_size = 256)
{
    return eval_sa(model, data.images, data.labels, batch_size);
}

// Accuracy on x + delta from a true-label PGD attack per batch.
template <ClassifierModel M>
[[nodiscard]] Real eval_ra(const M& model, const Tensor& images, std::span<const int> labels,
                           const PerturbBudget& budget, const EvalOptions& opts = {})
{
    validate_image_batch(images, "evaluation images");
    const std::size_t n = images.dim(0);
    if (labels.size() != n) {
        throw ValidationError("evaluation labels must match the number of images");
    }
    std::size_t correct = 0;
    for (std::size_t b = 0, batch = 0; b < n; b += opts.batch_size, ++batch) {
        const std::size_t e = std::min(n, b + opts.batch_size);
        const Tensor x = images.slice_rows(b, e);
        const auto y = labels.subspan(b, e - b);
        Rng rng = make_rng(opts.seed, {0xE7A1u, batch});
        auto d = eval_attack(model, x, y, budget, rng, opts.bn_mode);
        const Tensor logits =
            model.forward_classifier(ag::Var::constant(apply_perturbation(x, d.delta)), ForwardOptions::eval())
                .value();
        correct += detail::count_correct(logits, y);
    }
    return static_cast<Real>(correct) / static_cast<Real>(n);
}

template <ClassifierModel M>
[[nodiscard]] Real eval_ra(const M& model, const Dataset& data, const PerturbBudget& budget,
                           const EvalOptions& opts = {})
{
    return eval_ra(model, data.images, data.labels, budget, opts);
}

struct EvalReport {
    std::string dataset;
    std::string model_fingerprint;
    Real sa = 0;
    std::vector<Real> eps_list;
    std::vector<std::size_t> steps_list;
    std::vector<std::vector<Real>> ra;  // ra[i][j]: eps_list[i], steps_list[j]
    Real step_size = 0;
    PerturbInit init = PerturbInit::zero;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;

    [[nodiscard]] nlohmann::json to_json() const
    {
        nlohmann::json grid = nlohmann::json::array();
        for (std::size_t i = 0; i < eps_list.size(); ++i) {
            for (std::size_t j = 0; j < steps_list.size(); ++j) {
                grid.push_back({{"epsilon", eps_list[i]},
                                {"epsilon_255", eps_list[i] * 255.0},
                                {"steps", steps_list[j]},
                                {"ra", ra[i][j]}});
            }
        }
        return {{"dataset", dataset},
                {"model_fingerprint", model_fingerprint},
                {"sa", sa},
                {"ra_grid", grid},
                {"budget", {{"norm", "linf"}, {"step_size", step_size}, {"init", advcl::to_string(init)}, {"seed", seed}}},
                {"warnings", warnings}};
    }

    [[nodiscard]] std::string to_csv() const
    {
        std::ostringstream o;
        o << std::setprecision(10) << "epsilon,epsilon_255,steps,ra\n";
        for (std::size_t i = 0; i < eps_list.size(); ++i) {
            for (std::size_t j = 0; j < steps_list.size(); ++j) {
                o << eps_list[i] << ',' << eps_list[i] * 255.0 << ',' << steps_list[j] << ',' << ra[i][j] << '\n';
            }
        }
        return o.str();
    }
};

// Indices i where seq[i+1] exceeds seq[i] by more than tol.
[[nodiscard]] inline std::vector<std::size_t> increases(const std::vector<Real>& seq, Real tol)
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        if (seq[i + 1] > seq[i] + tol) {
            out.push_back(i);
        }
    }
    return out;
}

// Obfuscated-gradient screen: RA should not grow with epsilon or with steps.
[[nodiscard]] inline std::vector<std::string> screen_sweep(const EvalReport& r, Real tol)
{
    std::vector<std::string> w;
    for (std::size_t j = 0; j < r.steps_list.size(); ++j) {
        std::vector<Real> col;
        for (std::size_t i = 0; i < r.eps_list.size(); ++i) {
            col.push_back(r.ra[i][j]);
        }
        for (auto i : increases(col, tol)) {
            w.push_back("RA increases with epsilon at steps=" + std::to_string(r.steps_list[j]) + " between eps=" +
                        std::to_string(r.eps_list[i] * 255) + "/255 and " + std::to_string(r.eps_list[i + 1] * 255) +
                        "/255");
        }
    }
    for (std::size_t i = 0; i < r.eps_list.size(); ++i) {
        for (auto j : increases(r.ra[i], tol)) {
            w.push_back("RA increases with steps at eps=" + std::to_string(r.eps_list[i] * 255) + "/255 between " +
                        std::to_string(r.steps_list[j]) + " and " + std::to_string(r.steps_list[j + 1]) + " steps");
        }
    }
    return w;
}

template <ClassifierModel M>
[[nodiscard]] EvalReport eval_sweep(const M& model, const Dataset& data, const std::vector<Real>& eps_list,
                                    const std::vector<std::size_t>& steps_list, const EvalOptions& opts = {})
{
    if (eps_list.empty() || steps_list.empty()) {
        throw ValidationError("sweep needs at least one epsilon and one step count");
    }
    EvalReport r;
    r.dataset = data.name;
    r.eps_list = eps_list;
    r.steps_list = steps_list;
    r.step_size = opts.step_size;
    r.init = opts.init;
    r.seed = opts.seed;
    r.sa = eval_sa(model, data, opts.batch_size);
    r.ra.assign(eps_list.size(), std::vector<Real>(steps_list.size(), 0));
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        for (std::size_t j = 0; j < steps_list.size(); ++j) {
            if (eps_list[i] == 0) {
                r.ra[i][j] = r.sa;
                continue;
            }
            r.ra[i][j] = eval_ra(model, data, PerturbBudget{eps_list[i], steps_list[j], opts.step_size, opts.init}, opts);
        }
    }
    r.warnings = screen_sweep(r, opts.screen_tolerance);
    return r;
}

// report.json, report.csv, ra_vs_eps.svg and ra_vs_steps.svg under `dir`.
inline void write_eval_report(const std::filesystem::path& dir, const EvalReport& r)
{
    write_text(dir / "report.json", r.to_json().dump(2) + "\n");
    write_text(dir / "report.csv", r.to_csv());
    std::vector<Series> by_eps, by_steps;
    for (std::size_t j = 0; j < r.steps_list.size(); ++j) {
        Series s{"steps=" + std::to_string(r.steps_list[j]), {}, {}};
        for (std::size_t i = 0; i < r.eps_list.size(); ++i) {
            s.x.push_back(r.eps_list[i] * 255.0);
            s.y.push_back(r.ra[i][j]);
        }
        by_eps.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < r.eps_list.size(); ++i) {
        std::ostringstream label;
        label << "eps=" << r.eps_list[i] * 255.0 << "/255";
        Series s{label.str(), {}, {}};
        for (std::size_t j = 0; j < r.steps_list.size(); ++j) {
            s.x.push_back(static_cast<Real>(r.steps_list[j]));
            s.y.push_back(r.ra[i][j]);
        }
        by_steps.push_back(std::move(s));
    }
    write_svg_plot(dir / "ra_vs_eps.svg", "RA vs epsilon (" + r.dataset + ")", "epsilon (x/255)", "RA", by_eps);
    write_svg_plot(dir / "ra_vs_steps.svg", "RA vs PGD steps (" + r.dataset + ")", "steps", "RA", by_steps);
}

} // namespace advcl

#endif // ADVCL_EVALUATE_HPP
