#ifndef ADVCL_PRETRAIN_HPP
#define ADVCL_PRETRAIN_HPP

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "attacks.hpp"
#include "checkpoint.hpp"
#include "clusterfit.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "frequency.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "random.hpp"

namespace advcl {

// Rows of the view-selection ablation. Names are stable identifiers used in
// configs, CLI flags and result tables.
enum class ViewRecipe {
    single_adv,             // t1+d1, t2
    paired_adv,             // t1+d1, t2+d2
    paired_adv_plus_clean,  // t1+d1, t2+d2, t1, t2
    three_view,             // x+d, t1, t2
    three_view_low,         // x+d, t1, t2, x_l
    three_view_low_high,    // x+d, t1, t2, x_l, x_h
    three_view_high,        // x+d, t1, t2, x_h
};

inline constexpr std::array<ViewRecipe, 7> kAllViewRecipes{
    ViewRecipe::single_adv,     ViewRecipe::paired_adv,          ViewRecipe::paired_adv_plus_clean,
    ViewRecipe::three_view,     ViewRecipe::three_view_low,      ViewRecipe::three_view_low_high,
    ViewRecipe::three_view_high};

[[nodiscard]] inline const char* to_string(ViewRecipe r)
{
    switch (r) {
    case ViewRecipe::single_adv: return "single_adv";
    case ViewRecipe::paired_adv: return "paired_adv";
    case ViewRecipe::paired_adv_plus_clean: return "paired_adv_plus_clean";
    case ViewRecipe::three_view: return "three_view";
    case ViewRecipe::three_view_low: return "three_view_low";
    case ViewRecipe::three_view_low_high: return "three_view_low_high";
    default: return "three_view_high";
    }
}

[[nodiscard]] inline ViewRecipe parse_view_recipe(const std::string& s)
{
    for (auto r : kAllViewRecipes) {
        if (s == to_string(r)) {
            return r;
        }
    }
    throw ConfigError("unknown view recipe '" + s + "'");
}

// Human-readable view list, e.g. "x+d, t1(x), t2(x), x_h".
[[nodiscard]] inline std::string describe(ViewRecipe r)
{
    switch (r) {
    case ViewRecipe::single_adv: return "t1(x)+d1, t2(x)";
    case ViewRecipe::paired_adv: return "t1(x)+d1, t2(x)+d2";
    case ViewRecipe::paired_adv_plus_clean: return "t1(x)+d1, t2(x)+d2, t1(x), t2(x)";
    case ViewRecipe::three_view: return "x+d, t1(x), t2(x)";
    case ViewRecipe::three_view_low: return "x+d, t1(x), t2(x), x_l";
    case ViewRecipe::three_view_low_high: return "x+d, t1(x), t2(x), x_l, x_h";
    default: return "x+d, t1(x), t2(x), x_h";
    }
}

struct PretrainConfig {
    EncoderConfig encoder;
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    Real lr = 0.5;
    Real warmup_start_lr = 0.01;
    Real warmup_epochs = 10;
    Real momentum = 0.9;
    Real weight_decay = 1e-4;
    Real temperature = 0.5;
    Real lambda = 0.2;
    PerturbBudget budget = PerturbBudget::training(5);
    ViewRecipe views = ViewRecipe::three_view_high;
    std::vector<std::size_t> k_list{2, 10, 50, 100, 500};
    std::uint64_t seed = 0;
    AugmentConfig augment;
    Real frequency_radius = 8;
    bool clamp_frequency_views = false;
    AttackBnMode attack_bn_mode = AttackBnMode::eval;
    bool shared_optimizer = true;  // pseudo heads use the encoder's optimizer settings
    Real pseudo_head_lr = 0.5;     // only when shared_optimizer is false
    std::size_t checkpoint_every = 1;

    void validate() const
    {
        encoder.validate();
        augment.validate();
        budget.validate();
        if (epochs == 0) throw ConfigError("epochs must be >= 1");
        if (batch_size < 2) throw ConfigError("contrastive batch_size must be >= 2");
        if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
        if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
        if (!(lr > 0) || warmup_start_lr < 0 || warmup_epochs < 0) throw ConfigError("invalid learning-rate schedule");
        if (frequency_radius < 0) throw ConfigError("frequency_radius must be >= 0");
        if (lambda > 0 && k_list.empty()) throw ConfigError("k_list must not be empty when lambda > 0");
    }

    [[nodiscard]] WarmupCosineSchedule schedule() const
    {
        return {lr, warmup_start_lr, warmup_epochs, static_cast<Real>(epochs)};
    }
};

// m views of one batch plus the normalization route of each.
struct ViewBundle {
    std::vector<Tensor> views;
    std::vector<BNRoute> routes;
    std::vector<std::string> names;

    void add(Tensor v, BNRoute r, std::string name)
    {
        views.push_back(std::move(v));
        routes.push_back(r);
        names.push_back(std::move(name));
    }
    [[nodiscard]] std::size_t size() const noexcept { return views.size(); }
};

// Independent random streams of one training step.
struct StepStreams {
    Rng augment;
    Rng attack;
    Rng ce_attack;

    [[nodiscard]] static StepStreams make(std::uint64_t seed, std::uint64_t epoch, std::uint64_t step)
    {
        return {make_rng(seed, {0xA06u, epoch, step}), make_rng(seed, {0xA77u, epoch, step}),
                make_rng(seed, {0xCE0u, epoch, step})};
    }
};

[[nodiscard]] inline Tensor frequency_view(const Tensor& x, Real radius, FrequencyBand band, bool clamp_view)
{
    auto parts = fft_decompose(x, radius);
    Tensor v = band == FrequencyBand::high ? std::move(parts.high) : std::move(parts.low);
    return clamp_view ? clamp(std::move(v), 0.0, 1.0) : v;
}

// Samples t1, t2 once and assembles the recipe's views, running the adversarial
// view attack against the current (read-only) model.
[[nodiscard]] inline ViewBundle build_views(const RobustModel& model, const Tensor& x, const PretrainConfig& cfg,
                                            StepStreams& rng)
{
    const Tensor t1 = augment(x, cfg.augment, rng.augment);
    const Tensor t2 = augment(x, cfg.augment, rng.augment);
    const ContrastiveAttackOptions aopt{Temperature(cfg.temperature), cfg.attack_bn_mode};
    ViewBundle b;
    switch (cfg.views) {
    case ViewRecipe::single_adv: {
        auto d1 = adv_view_single(model, t1, t2, cfg.budget, rng.attack, aopt);
        b.add(apply_perturbation(t1, d1.delta), BNRoute::adv_cl, "t1+d1");
        b.add(t2, BNRoute::normal, "t2");
        return b;
    }
    case ViewRecipe::paired_adv:
    case ViewRecipe::paired_adv_plus_clean: {
        auto [d1, d2] = adv_view_paired(model, t1, t2, cfg.budget, rng.attack, aopt);
        b.add(apply_perturbation(t1, d1.delta), BNRoute::adv_cl, "t1+d1");
        b.add(apply_perturbation(t2, d2.delta), BNRoute::adv_cl, "t2+d2");
        if (cfg.views == ViewRecipe::paired_adv_plus_clean) {
            b.add(t1, BNRoute::normal, "t1");
            b.add(t2, BNRoute::normal, "t2");
        }
        return b;
    }
    default: break;
    }
    auto d = adv_view_3view(model, x, t1, t2, cfg.budget, rng.attack, aopt);
    b.add(t1, BNRoute::normal, "t1");
    b.add(t2, BNRoute::normal, "t2");
    b.add(apply_perturbation(x, d.delta), BNRoute::adv_cl, "x+d");
    if (cfg.views == ViewRecipe::three_view_low || cfg.views == ViewRecipe::three_view_low_high) {
        b.add(frequency_view(x, cfg.frequency_radius, FrequencyBand::low, cfg.clamp_frequency_views), BNRoute::normal,
              "x_l");
    }
    if (cfg.views == ViewRecipe::three_view_high || cfg.views == ViewRecipe::three_view_low_high) {
        b.add(frequency_view(x, cfg.frequency_radius, FrequencyBand::high, cfg.clamp_frequency_views),
              BNRoute::normal, "x_h");
    }
    return b;
}

// Contrastive loss over a bundle; every view is forwarded on its own route.
[[nodiscard]] inline ag::Var contrastive_loss(const RobustModel& model, const ViewBundle& bundle, Temperature t,
                                              const ForwardOptions& mode)
{
    std::vector<ag::Var> zs;
    for (std::size_t i = 0; i < bundle.size(); ++i) {
        ForwardOptions o = mode;
        o.route = bundle.routes[i];
        zs.push_back(model.forward_projection(ag::Var::constant(bundle.views[i]), o));
    }
    return ntxent_multi_view(zs, t);
}

[[nodiscard]] inline std::vector<std::size_t> all_heads(const RobustModel& model)
{
    std::vector<std::size_t> h(model.num_pseudo_heads());
    for (std::size_t i = 0; i < h.size(); ++i) {
        h[i] = i;
    }
    return h;
}

struct AdvclLoss {
    ag::Var total;
    ag::Var cl;
    ag::Var ce;  // undefined when lambda == 0
};

// Outer AdvCL objective with all perturbations held fixed.
[[nodiscard]] inline AdvclLoss advcl_loss(const RobustModel& model, const ViewBundle& bundle, const Tensor* x_ce,
                                          const std::vector<std::vector<int>>& pseudo_labels,
                                          const PretrainConfig& cfg, const ForwardOptions& mode)
{
    AdvclLoss out;
    out.cl = contrastive_loss(model, bundle, Temperature(cfg.temperature), mode);
    out.total = out.cl;
    if (cfg.lambda > 0) {
        if (x_ce == nullptr || pseudo_labels.empty()) {
            throw StateError("lambda > 0 requires pseudo-label tables");
        }
        ForwardOptions o = mode;
        o.route = BNRoute::adv_ce;
        const auto heads = all_heads(model);
        out.ce = pseudo_ce(model, ag::Var::constant(*x_ce), pseudo_labels, heads, o);
        out.total = out.cl + out.ce * cfg.lambda;
    }
    return out;
}

// Everything an AdvCL step feeds to the outer loss: views and the CE-attack input.
struct AdvclInputs {
    ViewBundle bundle;
    std::optional<Tensor> x_ce;
    std::vector<std::vector<int>> pseudo_labels;
};

[[nodiscard]] inline AdvclInputs advcl_inputs(const RobustModel& model, const Tensor& x,
                                              std::span<const std::size_t> indices, const PseudoLabelTable* table,
                                              const PretrainConfig& cfg, StepStreams& rng)
{
    AdvclInputs in;
    in.bundle = build_views(model, x, cfg, rng);
    if (cfg.lambda > 0) {
        if (table == nullptr || model.num_pseudo_heads() == 0) {
            throw StateError("lambda > 0 but no pseudo-label table is loaded");
        }
        in.pseudo_labels = table->labels_for(indices);
        const auto heads = all_heads(model);
        auto d = adv_ce(model, x, in.pseudo_labels, cfg.budget, heads, rng.ce_attack, cfg.attack_bn_mode);
        in.x_ce = apply_perturbation(x, d.delta);
    }
    return in;
}

struct StepOutput {
    ag::Var loss;
    std::map<std::string, Real> parts;
};

// Builds the step's inputs and returns the outer loss (not yet differentiated).
[[nodiscard]] inline StepOutput advcl_objective(RobustModel& model, const Batch& batch, const PseudoLabelTable* table,
                                                const PretrainConfig& cfg, std::uint64_t epoch, std::uint64_t step)
{
    auto rng = StepStreams::make(cfg.seed, epoch, step);
    auto in = advcl_inputs(model, batch.images, batch.indices, table, cfg, rng);
    auto l = advcl_loss(model, in.bundle, in.x_ce ? &*in.x_ce : nullptr, in.pseudo_labels, cfg,
                        ForwardOptions::train());
    StepOutput out{l.total, {{"loss", l.total.item()}, {"cl_loss", l.cl.item()}}};
    out.parts["ce_loss"] = l.ce.defined() ? l.ce.item() : 0.0;
    return out;
}

// ------------------------------------------------------------------ training loop

struct EpochMetrics {
    std::string stage;
    std::size_t epoch = 0;
    Real lr = 0;
    std::size_t steps = 0;
    std::map<std::string, Real> means;  // per-epoch means of the step parts
};

[[nodiscard]] inline nlohmann::json to_json(const EpochMetrics& m)
{
    nlohmann::json j = {{"stage", m.stage}, {"epoch", m.epoch}, {"lr", m.lr}, {"steps", m.steps}};
    for (const auto& [k, v] : m.means) {
        j[k] = v;
    }
    return j;
}

[[nodiscard]] inline EpochMetrics epoch_metrics_from_json(const nlohmann::json& j)
{
    EpochMetrics m;
    for (const auto& [k, v] : j.items()) {
        if (k == "stage") m.stage = v.get<std::string>();
        else if (k == "epoch") m.epoch = v.get<std::size_t>();
        else if (k == "lr") m.lr = v.get<Real>();
        else if (k == "steps") m.steps = v.get<std::size_t>();
        else m.means[k] = v.get<Real>();
    }
    return m;
}

inline void write_metrics_jsonl(const std::filesystem::path& path, const std::vector<EpochMetrics>& history)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write metrics file " + path.string());
    }
    for (const auto& m : history) {
        out << to_json(m).dump() << '\n';
    }
}

struct TrainOptions {
    std::filesystem::path output_dir;  // empty: no files written
    std::string config_hash;
    std::filesystem::path resume_from;  // checkpoint written by the same stage
    bool keep_epoch_checkpoints = false;
    std::size_t checkpoint_every = 1;
    std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
    std::unique_ptr<RobustModel> model;
    std::vector<EpochMetrics> history;
    std::filesystem::path checkpoint;  // last written, if any
};

struct ParamGroup {
    std::vector<Parameter*> params;
    SgdConfig sgd;
    Real lr_scale = 1.0;
};

struct LoopSpec {
    std::string stage;
    std::size_t epochs = 1;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    std::function<Real(Real)> lr_at;  // fractional epoch -> lr
};

using StepFn = std::function<StepOutput(RobustModel&, const Batch&, std::uint64_t epoch, std::uint64_t step)>;

// Epoch/step driver shared by every training stage. Randomness of each step is
// derived from (seed, epoch, step), so a run resumed from an epoch checkpoint
// reproduces the uninterrupted run bit for bit.
[[nodiscard]] inline TrainResult run_training(std::unique_ptr<RobustModel> model, const Dataset& data,
                                              const LoopSpec& spec, std::vector<ParamGroup> groups,
                                              const StepFn& step_fn, const TrainOptions& opts = {})
{
    if (data.size() == 0) {
        throw ValidationError("training dataset is empty");
    }
    std::vector<Sgd> opt;
    for (auto& g : groups) {
        opt.emplace_back(g.params, g.sgd);
    }
    TrainResult res;
    std::size_t start_epoch = 0;
    if (!opts.resume_from.empty()) {
        Checkpoint ck = load_checkpoint(opts.resume_from);
        if (ck.meta.value("stage", "") != spec.stage) {
            throw ConfigError("cannot resume " + spec.stage + " from a " + ck.meta.value("stage", "?") + " checkpoint");
        }
        if (!opts.config_hash.empty() && ck.config_hash != opts.config_hash) {
            throw ConfigError("resume checkpoint was written with a different configuration");
        }
        auto src = ck.model->parameters();
        auto dst = model->parameters();
        if (src.size() != dst.size()) {
            throw ConfigError("resume checkpoint does not match the model layout");
        }
        for (std::size_t i = 0; i < dst.size(); ++i) {
            if (src[i]->name != dst[i]->name || !src[i]->value().same_shape(dst[i]->value())) {
                throw ConfigError("resume checkpoint tensor mismatch at " + dst[i]->name);
            }
            dst[i]->value() = src[i]->value();
        }
        auto sb = ck.model->buffers();
        auto db = model->buffers();
        for (std::size_t i = 0; i < db.size(); ++i) {
            *db[i].tensor = *sb.at(i).tensor;
        }
        for (std::size_t g = 0; g < opt.size(); ++g) {
            opt[g].load_state(ck.extra, "sgd" + std::to_string(g) + "/");
        }
        for (const auto& m : ck.meta.at("history")) {
            res.history.push_back(epoch_metrics_from_json(m));
        }
        start_epoch = ck.meta.at("epoch").get<std::size_t>() + 1;
        res.checkpoint = opts.resume_from;
    }

    const std::size_t steps_per_epoch = (data.size() + spec.batch_size - 1) / spec.batch_size;
    auto save = [&](std::size_t epoch) {
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& m : res.history) {
            hist.push_back(to_json(m));
        }
        nlohmann::json meta = {{"stage", spec.stage}, {"epoch", epoch}, {"seed", spec.seed}, {"history", hist}};
        std::map<std::string, Tensor> extra;
        for (std::size_t g = 0; g < opt.size(); ++g) {
            extra.merge(opt[g].state("sgd" + std::to_string(g) + "/"));
        }
        const auto last = opts.output_dir / "last.ckpt";
        save_checkpoint(last, *model, meta, extra, opts.config_hash);
        if (opts.keep_epoch_checkpoints) {
            save_checkpoint(opts.output_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), *model, meta, extra,
                            opts.config_hash);
        }
        res.checkpoint = last;
    };

    for (std::size_t epoch = start_epoch; epoch < spec.epochs; ++epoch) {
        const auto batches = epoch_batches(data.size(), spec.batch_size, true, spec.seed, epoch);
        EpochMetrics em;
        em.stage = spec.stage;
        em.epoch = epoch;
        em.lr = spec.lr_at(static_cast<Real>(epoch));
        for (std::size_t s = 0; s < batches.size(); ++s) {
            const Real lr = spec.lr_at(static_cast<Real>(epoch) + static_cast<Real>(s) / static_cast<Real>(steps_per_epoch));
            const Batch batch = data.batch(batches[s]);
            model->zero_grad();
            StepOutput out = step_fn(*model, batch, epoch, s);
            const Real loss = out.loss.item();
            if (!std::isfinite(loss)) {
                std::string parts;
                for (const auto& [k, v] : out.parts) {
                    parts += " " + k + "=" + std::to_string(v);
                }
                throw TrainingError(spec.stage + ": non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                        std::to_string(s) + " (lr " + std::to_string(lr) + ";" + parts + ")",
                                    res.checkpoint.string());
            }
            ag::backward(out.loss);
            for (std::size_t g = 0; g < opt.size(); ++g) {
                opt[g].step(lr * groups[g].lr_scale);
            }
            for (const auto& [k, v] : out.parts) {
                em.means[k] += v;
            }
            ++em.steps;
        }
        model->zero_grad();
        for (auto& [k, v] : em.means) {
            v /= static_cast<Real>(em.steps);
        }
        res.history.push_back(em);
        if (opts.on_epoch) {
            opts.on_epoch(em);
        }
        if (!opts.output_dir.empty()) {
            write_metrics_jsonl(opts.output_dir / "metrics.jsonl", res.history);
            const bool due = opts.checkpoint_every > 0 && (epoch + 1) % opts.checkpoint_every == 0;
            if (due || epoch + 1 == spec.epochs) {
                save(epoch);
            }
        }
    }
    res.model = std::move(model);
    return res;
}

[[nodiscard]] inline std::unique_ptr<RobustModel> make_model_for(const EncoderConfig& enc, const Dataset& data)
{
    if (enc.input_channels != data.channels() || enc.input_size != data.resolution()) {
        throw ConfigError("encoder expects " + std::to_string(enc.input_channels) + "x" +
                          std::to_string(enc.input_size) + " inputs but dataset '" + data.name + "' is " +
                          std::to_string(data.channels()) + "x" + std::to_string(data.resolution()));
    }
    return std::make_unique<RobustModel>(enc);
}

// Full AdvCL pretraining. `table` must be given when cfg.lambda > 0 and must
// cover every sample of `data`; it is never modified.
[[nodiscard]] inline TrainResult pretrain(const PretrainConfig& cfg, const Dataset& data,
                                          const PseudoLabelTable* table = nullptr, TrainOptions opts = {})
{
    cfg.validate();
    auto model = make_model_for(cfg.encoder, data);
    if (cfg.lambda > 0) {
        if (table == nullptr) {
            throw StateError("lambda > 0 requires a pseudo-label table (run `cluster` first)");
        }
        if (table->num_samples != data.size()) {
            throw StateError("pseudo-label table covers " + std::to_string(table->num_samples) +
                             " samples, dataset has " + std::to_string(data.size()));
        }
        if (table->k_list() != cfg.k_list) {
            throw ConfigError("pseudo-label table K list does not match the configured k_list");
        }
        model->attach_pseudo_heads(table->k_list(), derive_seed(cfg.encoder.init_seed, {0x9E4Du}));
    }
    const SgdConfig sgd{cfg.momentum, cfg.weight_decay};
    std::vector<ParamGroup> groups;
    if (cfg.shared_optimizer) {
        groups.push_back({model->parameters(), sgd, 1.0});
    } else {
        auto enc = model->encoder_parameters();
        for (auto* p : model->parameters()) {
            if (p->name.rfind("projection.", 0) == 0) {
                enc.push_back(p);
            }
        }
        groups.push_back({enc, sgd, 1.0});
        groups.push_back({model->pseudo_head_parameters(), sgd, cfg.pseudo_head_lr / cfg.lr});
    }
    const auto sched = cfg.schedule();
    LoopSpec spec{"pretrain", cfg.epochs, cfg.batch_size, cfg.seed, sched};
    opts.checkpoint_every = cfg.checkpoint_every;
    StepFn fn = [&cfg, table](RobustModel& m, const Batch& b, std::uint64_t e, std::uint64_t s) {
        return advcl_objective(m, b, table, cfg, e, s);
    };
    return run_training(std::move(model), data, spec, std::move(groups), fn, opts);
}

// Standard two-view contrastive pretraining: no attacks, `normal` route only.
[[nodiscard]] inline StepOutput simclr_objective(RobustModel& model, const Batch& batch, const PretrainConfig& cfg,
                                                 std::uint64_t epoch, std::uint64_t step)
{
    auto rng = StepStreams::make(cfg.seed, epoch, step);
    ViewBundle b;
    b.add(augment(batch.images, cfg.augment, rng.augment), BNRoute::normal, "t1");
    b.add(augment(batch.images, cfg.augment, rng.augment), BNRoute::normal, "t2");
    ag::Var l = contrastive_loss(model, b, Temperature(cfg.temperature), ForwardOptions::train());
    return {l, {{"loss", l.item()}, {"cl_loss", l.item()}}};
}

[[nodiscard]] inline TrainResult simclr_pretrain(const PretrainConfig& cfg, const Dataset& data, TrainOptions opts = {})
{
    cfg.validate();
    auto model = make_model_for(cfg.encoder, data);
    std::vector<ParamGroup> groups{{model->parameters(), SgdConfig{cfg.momentum, cfg.weight_decay}, 1.0}};
    LoopSpec spec{"simclr", cfg.epochs, cfg.batch_size, cfg.seed, cfg.schedule()};
    opts.checkpoint_every = cfg.checkpoint_every;
    StepFn fn = [&cfg](RobustModel& m, const Batch& b, std::uint64_t e, std::uint64_t s) {
        return simclr_objective(m, b, cfg, e, s);
    };
    return run_training(std::move(model), data, spec, std::move(groups), fn, opts);
}

// ------------------------------------------------------------------ supervised AT baseline

struct SupervisedConfig {
    EncoderConfig encoder;
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    Real lr = 0.1;
    std::vector<Real> milestones{15, 20};
    Real gamma = 0.1;
    Real momentum = 0.9;
    Real weight_decay = 5e-4;
    PerturbBudget budget = PerturbBudget::training(10);
    AttackBnMode attack_bn_mode = AttackBnMode::eval;
    bool augment_inputs = false;
    AugmentConfig augment;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 1;

    void validate() const
    {
        encoder.validate();
        budget.validate();
        if (epochs == 0 || batch_size == 0) throw ConfigError("epochs and batch_size must be >= 1");
        if (!(lr > 0)) throw ConfigError("lr must be > 0");
    }
};

// Min-max CE step: inner PGD on the true-label CE, outer CE on x + delta.
// Parts also report the clean and adversarial CE under the attack's
// normalization mode, measured before the update.
[[nodiscard]] inline StepOutput supervised_at_objective(RobustModel& model, const Batch& batch,
                                                        const SupervisedConfig& cfg, std::uint64_t epoch,
                                                        std::uint64_t step)
{
    auto rng = StepStreams::make(cfg.seed, epoch, step);
    Tensor x = cfg.augment_inputs ? augment(batch.images, cfg.augment, rng.augment) : batch.images;
    auto d = eval_attack(model, x, batch.labels, cfg.budget, rng.attack, cfg.attack_bn_mode);
    const Tensor x_adv = apply_perturbation(x, d.delta);
    const auto probe = attack_options(BNRoute::normal, cfg.attack_bn_mode);
    const Real clean = cross_entropy(model.forward_classifier(ag::Var::constant(x), probe).value(), batch.labels);
    const Real robust =
        cross_entropy(model.forward_classifier(ag::Var::constant(x_adv), probe).value(), batch.labels);
    ag::Var l = cross_entropy(model.forward_classifier(ag::Var::constant(x_adv), ForwardOptions::train()),
                              batch.labels);
    return {l, {{"loss", l.item()}, {"probe_clean_ce", clean}, {"probe_adv_ce", robust},
                {"max_abs_delta", d.delta.max_abs()}}};
}

[[nodiscard]] inline TrainResult supervised_at(const SupervisedConfig& cfg, const Dataset& data, TrainOptions opts = {})
{
    cfg.validate();
    if (data.num_classes == 0) {
        throw ValidationError("supervised training needs a labelled dataset");
    }
    auto model = make_model_for(cfg.encoder, data);
    model->attach_classifier(data.num_classes, derive_seed(cfg.encoder.init_seed, {0xC1A5u}));
    std::vector<ParamGroup> groups{{model->parameters(), SgdConfig{cfg.momentum, cfg.weight_decay}, 1.0}};
    MultiStepSchedule sched{cfg.lr, cfg.milestones, cfg.gamma};
    LoopSpec spec{"supervised_at", cfg.epochs, cfg.batch_size, cfg.seed, sched};
    opts.checkpoint_every = cfg.checkpoint_every;
    StepFn fn = [&cfg](RobustModel& m, const Batch& b, std::uint64_t e, std::uint64_t s) {
        return supervised_at_objective(m, b, cfg, e, s);
    };
    return run_training(std::move(model), data, spec, std::move(groups), fn, opts);
}

} // namespace advcl

#endif // ADVCL_PRETRAIN_HPP
