#ifndef ADVCL_FINETUNE_HPP
#define ADVCL_FINETUNE_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "attacks.hpp"
#include "checkpoint.hpp"
#include "data.hpp"
#include "evaluate.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "pretrain.hpp"

namespace advcl {

enum class FinetuneMode { slf, alf, aff };

[[nodiscard]] inline const char* to_string(FinetuneMode m)
{
    switch (m) {
    case FinetuneMode::slf: return "slf";
    case FinetuneMode::alf: return "alf";
    default: return "aff";
    }
}

[[nodiscard]] inline FinetuneMode parse_finetune_mode(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "slf") return FinetuneMode::slf;
    if (s == "alf") return FinetuneMode::alf;
    if (s == "aff") return FinetuneMode::aff;
    throw ConfigError("unknown finetune mode '" + s + "' (expected slf, alf or aff)");
}

struct FinetuneConfig {
    FinetuneMode mode = FinetuneMode::slf;
    std::size_t epochs = 25;
    std::size_t batch_size = 128;
    Real lr = 0.1;
    std::vector<Real> milestones{15, 20};
    Real gamma = 0.1;
    Real momentum = 0.9;
    Real weight_decay = 2e-4;
    PerturbBudget budget = PerturbBudget::training(10);  // ALF / AFF inner attack
    Real trades_beta = kDefaultTradesBeta;
    AttackBnMode attack_bn_mode = AttackBnMode::eval;
    bool freeze_bn_stats = true;   // SLF / ALF: running statistics stay as loaded
    bool cache_features = true;    // SLF without augmentation: encode once
    bool augment_inputs = false;
    AugmentConfig augment;
    Real val_fraction = 0.1;       // held out for best-epoch selection; 0 selects on train
    std::size_t select_attack_steps = 10;
    bool resize_inputs = true;     // adapt datasets whose resolution differs from the encoder
    std::uint64_t seed = 0;

    void validate() const
    {
        if (epochs == 0 || batch_size == 0) throw ConfigError("finetune epochs and batch_size must be >= 1");
        if (!(lr > 0)) throw ConfigError("finetune lr must be > 0");
        if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in [0, 1)");
        if (!(trades_beta >= 0)) throw ConfigError("trades_beta must be >= 0");
        if (mode != FinetuneMode::slf) {
            budget.validate();
        }
    }

    [[nodiscard]] MultiStepSchedule schedule() const { return {lr, milestones, gamma}; }
};

// Converts a dataset to the encoder's resolution (bilinear) when allowed.
[[nodiscard]] inline Dataset adapt_dataset(const Dataset& data, const EncoderConfig& enc, bool allow_resize)
{
    if (data.channels() != enc.input_channels) {
        throw ConfigError("encoder expects " + std::to_string(enc.input_channels) + " channels, dataset '" + data.name +
                          "' has " + std::to_string(data.channels()));
    }
    if (data.resolution() == enc.input_size) {
        return data;
    }
    if (!allow_resize) {
        throw ConfigError("dataset resolution " + std::to_string(data.resolution()) + " differs from encoder input " +
                          std::to_string(enc.input_size) + " and resize_inputs is off");
    }
    Dataset out = data;
    out.images = clamp(resize_batch(data.images, enc.input_size), 0.0, 1.0);
    return out;
}

// Deterministic split; returns {train, validation}.
[[nodiscard]] inline std::pair<Dataset, Dataset> split_validation(const Dataset& data, Real fraction, std::uint64_t seed)
{
    const std::size_t n = data.size();
    const auto n_val = static_cast<std::size_t>(std::ceil(fraction * static_cast<Real>(n)));
    if (fraction <= 0 || n_val == 0 || n_val >= n) {
        return {data, data};
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(seed, {0x7A1u});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {data.subset(train), data.subset(val)};
}

struct FinetuneResult {
    std::unique_ptr<RobustModel> model;
    FinetuneMode mode = FinetuneMode::slf;
    std::vector<EpochMetrics> history;
    std::size_t best_epoch = 0;
    Real best_score = 0;           // validation SA (SLF) or RA (ALF/AFF)
    std::uint64_t encoder_hash_before = 0;
    std::uint64_t encoder_hash_after = 0;
    bool encoder_frozen = true;
    bool encoder_grads_seen = false;  // any encoder gradient materialized during SLF/ALF
};

namespace detail {

struct Snapshot {
    std::vector<Tensor> params;
    std::vector<Tensor> buffers;

    static Snapshot take(RobustModel& m)
    {
        Snapshot s;
        for (auto* p : m.parameters()) {
            s.params.push_back(p->value());
        }
        for (const auto& b : m.buffers()) {
            s.buffers.push_back(*b.tensor);
        }
        return s;
    }
    void restore(RobustModel& m) const
    {
        auto ps = m.parameters();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            ps[i]->value() = params[i];
        }
        auto bs = m.buffers();
        for (std::size_t i = 0; i < bs.size(); ++i) {
            *bs[i].tensor = buffers[i];
        }
    }
};

// A frozen-encoder view of the model whose features are precomputed.
struct CachedFeatureClassifier {
    const RobustModel* model;
    [[nodiscard]] ag::Var forward_classifier(const ag::Var& features, const ForwardOptions& o) const
    {
        return model->classify_features(features, o);
    }
};

} // namespace detail

// Trains the downstream head (SLF, ALF) or the whole network (AFF) and returns
// the epoch that scored best on the validation split.
[[nodiscard]] inline FinetuneResult finetune(std::unique_ptr<RobustModel> model, const Dataset& dataset,
                                             const FinetuneConfig& cfg, TrainOptions opts = {})
{
    cfg.validate();
    if (dataset.num_classes == 0 || dataset.size() == 0) {
        throw ValidationError("finetuning needs a non-empty labelled dataset");
    }
    const Dataset data = adapt_dataset(dataset, model->config(), cfg.resize_inputs);
    auto [train, val] = split_validation(data, cfg.val_fraction, cfg.seed);

    FinetuneResult res;
    res.mode = cfg.mode;
    res.encoder_frozen = cfg.mode != FinetuneMode::aff;
    model->reset_classifier(data.num_classes, derive_seed(cfg.seed, {0xC1A5u}));
    res.encoder_hash_before = RobustModel::hash_parameters(model->encoder_parameters());
    model->set_encoder_frozen(res.encoder_frozen);

    std::vector<Parameter*> trainable =
        res.encoder_frozen ? model->classifier_parameters() : [&] {
            auto v = model->encoder_parameters();
            auto c = model->classifier_parameters();
            v.insert(v.end(), c.begin(), c.end());
            return v;
        }();
    Sgd opt(trainable, SgdConfig{cfg.momentum, cfg.weight_decay});
    const auto sched = cfg.schedule();

    // Head-only modes read running statistics; AFF trains them on the normal route.
    ForwardOptions fwd = res.encoder_frozen && cfg.freeze_bn_stats ? ForwardOptions{BNRoute::normal, false, false, true}
                                                                   : ForwardOptions::train();
    const bool use_cache = cfg.mode == FinetuneMode::slf && cfg.cache_features && !cfg.augment_inputs &&
                           cfg.freeze_bn_stats;
    Tensor cached;
    if (use_cache) {
        std::vector<Tensor> parts;
        for (std::size_t b = 0; b < train.size(); b += 256) {
            const Tensor x = train.images.slice_rows(b, std::min(train.size(), b + 256));
            parts.push_back(model->forward_features(ag::Var::constant(x), ForwardOptions::eval()).value());
        }
        cached = Tensor::concat_rows(parts);
    }
    const PerturbBudget select_budget{cfg.budget.epsilon, cfg.select_attack_steps, cfg.budget.step_size,
                                      PerturbInit::zero};
    EvalOptions eval_opts;
    eval_opts.step_size = cfg.budget.step_size;
    eval_opts.seed = cfg.seed;

    detail::Snapshot best;
    bool have_best = false;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const Real lr = sched(static_cast<Real>(epoch));
        EpochMetrics em;
        em.stage = std::string("finetune_") + to_string(cfg.mode);
        em.epoch = epoch;
        em.lr = lr;
        std::size_t correct = 0, seen = 0;
        const auto batches = epoch_batches(train.size(), cfg.batch_size, true, cfg.seed, epoch);
        for (std::size_t s = 0; s < batches.size(); ++s) {
            auto rng = StepStreams::make(cfg.seed, epoch, s);
            const Batch batch = train.batch(batches[s]);
            model->zero_grad();
            ag::Var loss, logits;
            std::map<std::string, Real> parts;
            if (use_cache) {
                ag::Var f = ag::Var::constant(cached.gather_rows(batches[s]));
                logits = model->classify_features(f, fwd);
                loss = cross_entropy(logits, batch.labels);
            } else {
                const Tensor x = cfg.augment_inputs ? augment(batch.images, cfg.augment, rng.augment) : batch.images;
                if (cfg.mode == FinetuneMode::slf) {
                    logits = model->forward_classifier(ag::Var::constant(x), fwd);
                    loss = cross_entropy(logits, batch.labels);
                } else if (cfg.mode == FinetuneMode::alf) {
                    auto d = eval_attack(*model, x, batch.labels, cfg.budget, rng.attack, cfg.attack_bn_mode);
                    const auto probe = attack_options(BNRoute::normal, cfg.attack_bn_mode);
                    parts["probe_clean_ce"] =
                        cross_entropy(model->forward_classifier(ag::Var::constant(x), probe).value(), batch.labels);
                    logits = model->forward_classifier(ag::Var::constant(apply_perturbation(x, d.delta)), fwd);
                    loss = cross_entropy(logits, batch.labels);
                } else {
                    // TRADES: the attack maximizes KL(clean || adv) with the clean prediction fixed.
                    const auto ao = attack_options(BNRoute::normal, cfg.attack_bn_mode);
                    const ag::Var clean_fixed =
                        ag::Var::constant(model->forward_classifier(ag::Var::constant(x), ao).value());
                    LossGrad kl_obj = [&](const Tensor& x_adv) {
                        auto [v, g] = detail::value_and_input_grads({x_adv}, [&](const std::vector<ag::Var>& in) {
                            return kl_divergence(clean_fixed, model->forward_classifier(in[0], ao));
                        });
                        return std::pair<Real, Tensor>{v, std::move(g.front())};
                    };
                    auto d = pgd(kl_obj, x, cfg.budget, rng.attack);
                    ag::Var clean = model->forward_classifier(ag::Var::constant(x), fwd);
                    ag::Var adv = model->forward_classifier(ag::Var::constant(apply_perturbation(x, d.delta)), fwd);
                    loss = trades_loss(clean, adv, batch.labels, cfg.trades_beta);
                    parts["clean_ce"] = cross_entropy(clean.value(), batch.labels);
                    logits = clean;
                }
            }
            const Real lv = loss.item();
            if (!std::isfinite(lv)) {
                throw TrainingError("finetune: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                        std::to_string(s),
                                    "");
            }
            ag::backward(loss);
            if (res.encoder_frozen) {
                for (auto* p : model->encoder_parameters()) {
                    res.encoder_grads_seen = res.encoder_grads_seen || p->has_grad();
                }
            }
            opt.step(lr);
            correct += detail::count_correct(logits.value(), batch.labels);
            seen += batch.size();
            parts["loss"] = lv;
            for (const auto& [k, v] : parts) {
                em.means[k] += v;
            }
            ++em.steps;
        }
        model->zero_grad();
        for (auto& [k, v] : em.means) {
            v /= static_cast<Real>(em.steps);
        }
        em.means["train_acc"] = static_cast<Real>(correct) / static_cast<Real>(seen);
        const Real score = cfg.mode == FinetuneMode::slf ? eval_sa(*model, val)
                                                          : eval_ra(*model, val, select_budget, eval_opts);
        em.means[cfg.mode == FinetuneMode::slf ? "val_sa" : "val_ra"] = score;
        res.history.push_back(em);
        if (opts.on_epoch) {
            opts.on_epoch(em);
        }
        if (!have_best || score > res.best_score) {
            best = detail::Snapshot::take(*model);
            have_best = true;
            res.best_score = score;
            res.best_epoch = epoch;
        }
    }
    best.restore(*model);
    model->set_encoder_frozen(false);
    res.encoder_hash_after = RobustModel::hash_parameters(model->encoder_parameters());
    if (!opts.output_dir.empty()) {
        write_metrics_jsonl(opts.output_dir / "metrics.jsonl", res.history);
        nlohmann::json meta = {{"stage", "finetune"},
                               {"mode", to_string(cfg.mode)},
                               {"best_epoch", res.best_epoch},
                               {"best_score", res.best_score},
                               {"encoder_frozen", res.encoder_frozen}};
        save_checkpoint(opts.output_dir / "finetuned.ckpt", *model, meta, {}, opts.config_hash);
    }
    res.model = std::move(model);
    return res;
}

[[nodiscard]] inline FinetuneResult finetune(const std::filesystem::path& ckpt, const Dataset& data,
                                             const FinetuneConfig& cfg, TrainOptions opts = {})
{
    return finetune(std::move(load_checkpoint(ckpt).model), data, cfg, std::move(opts));
}

[[nodiscard]] inline FinetuneResult finetune_slf(const std::filesystem::path& ckpt, const Dataset& data,
                                                 FinetuneConfig cfg, TrainOptions opts = {})
{
    cfg.mode = FinetuneMode::slf;
    return finetune(ckpt, data, cfg, std::move(opts));
}

[[nodiscard]] inline FinetuneResult finetune_alf(const std::filesystem::path& ckpt, const Dataset& data,
                                                 FinetuneConfig cfg, TrainOptions opts = {})
{
    cfg.mode = FinetuneMode::alf;
    return finetune(ckpt, data, cfg, std::move(opts));
}

[[nodiscard]] inline FinetuneResult finetune_aff(const std::filesystem::path& ckpt, const Dataset& data,
                                                 FinetuneConfig cfg, TrainOptions opts = {})
{
    cfg.mode = FinetuneMode::aff;
    return finetune(ckpt, data, cfg, std::move(opts));
}

} // namespace advcl

#endif // ADVCL_FINETUNE_HPP
