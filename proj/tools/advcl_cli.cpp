// advcl command line: pretraining, clustering, finetuning, evaluation,
// analysis and ablation grids over the flat-key experiment config.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advcl.hpp"

namespace {

using namespace advcl;
namespace fs = std::filesystem;

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* app, Common& c)
{
    app->add_option("--config", c.config, "YAML config with flat keys");
    app->add_option("--set", c.sets, "override a config key, key=value (repeatable)");
    app->add_option("--seed", c.seed, "master seed");
    app->add_option("--out", c.out, "output directory (default: the artifact cache slot)");
}

ExperimentConfig resolve(const Common& c)
{
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    for (const auto& s : c.sets) {
        apply_override(cfg, s);
    }
    if (c.seed) {
        cfg.seed = *c.seed;
    }
    return cfg;
}

// Explicit commands always run; they write into --out or into the cache slot
// that later pipelines would look up.
StageRecord run_into(const Common& c, const ExperimentConfig& cfg, const std::string& stage, const nlohmann::json& key,
                     const std::vector<StageInput>& inputs, const StageBody& body)
{
    RunManifest m = make_manifest(stage, key, cfg, inputs);
    const fs::path dir = c.out.empty() ? artifact_root() / stage / m.cache_key : fs::path(c.out);
    return execute_stage(dir, std::move(m), body);
}

void report(const StageRecord& r)
{
    std::cout << nlohmann::json{{"stage", r.stage}, {"dir", r.dir.string()}, {"summary", r.manifest.summary}}.dump(2)
              << "\n";
}

Tensor pick_images(const Dataset& d, std::size_t first, std::size_t count)
{
    if (first >= d.size()) {
        throw ValidationError("image index " + std::to_string(first) + " out of range (dataset has " +
                              std::to_string(d.size()) + ")");
    }
    return d.images.slice_rows(first, std::min(d.size(), first + count));
}

Tensor image_of(const Tensor& batch, std::size_t i)
{
    const Tensor one = batch.slice_rows(i, i + 1);
    return one.reshaped({one.dim(1), one.dim(2), one.dim(3)});
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Adversarial contrastive pretraining toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kCodeVersion));

    Common common;

    auto* pre = app.add_subcommand("pretrain", "adversarial contrastive pretraining");
    add_common(pre, common);
    std::string resume, pseudo;
    pre->add_option("--resume", resume, "resume from a checkpoint of this stage");
    pre->add_option("--pseudo", pseudo, "pseudo-label table (default: cluster via the cache)");

    auto* sim = app.add_subcommand("simclr", "standard contrastive pretraining (clustering encoder)");
    add_common(sim, common);
    sim->add_option("--resume", resume, "resume from a checkpoint of this stage");

    auto* sup = app.add_subcommand("supervised-at", "supervised adversarial training baseline");
    add_common(sup, common);
    sup->add_option("--resume", resume, "resume from a checkpoint of this stage");

    auto* clu = app.add_subcommand("cluster", "k-means pseudo labels from a clustering encoder");
    add_common(clu, common);
    std::string fpre_ckpt;
    clu->add_option("--fpre-ckpt", fpre_ckpt, "encoder checkpoint (default: cached simclr run)");

    auto* fin = app.add_subcommand("finetune", "train a classifier on a pretrained encoder");
    add_common(fin, common);
    std::string ckpt, mode;
    fin->add_option("--ckpt", ckpt, "pretrained checkpoint")->required();
    fin->add_option("--mode", mode, "slf | alf | aff")->check(CLI::IsMember({"slf", "alf", "aff"}));

    auto* ev = app.add_subcommand("eval", "SA and RA sweep over epsilon and PGD steps");
    add_common(ev, common);
    std::vector<double> eps;
    std::vector<std::size_t> steps;
    std::optional<double> step_size;
    std::string attack_init;
    ev->add_option("--ckpt", ckpt, "finetuned checkpoint")->required();
    ev->add_option("--eps", eps, "radii in 1/255 units, e.g. --eps 0 2 4 8 16");
    ev->add_option("--steps", steps, "PGD step counts");
    ev->add_option("--step-size", step_size, "PGD step in 1/255 units");
    ev->add_option("--attack-init", attack_init, "zero | uniform_random")
        ->check(CLI::IsMember({"zero", "uniform_random"}));

    auto* ana = app.add_subcommand("analyze", "frequency views, feature inversion, loss landscape");
    ana->require_subcommand(1);
    auto* freq = ana->add_subcommand("freq", "write x, x_h and x_l for a few images");
    add_common(freq, common);
    std::size_t index = 0, count = 4;
    std::optional<double> radius;
    freq->add_option("--index", index, "first image");
    freq->add_option("--count", count, "number of images");
    freq->add_option("--radius", radius, "frequency split radius (default: config)");

    auto* fimc = ana->add_subcommand("fim", "feature inversion of one encoder unit");
    add_common(fimc, common);
    std::size_t unit = 0, fim_steps = 50;
    double fim_lr = 0.1;
    std::string sign = "min";
    fimc->add_option("--ckpt", ckpt, "encoder checkpoint")->required();
    fimc->add_option("--unit", unit, "feature coordinate");
    fimc->add_option("--steps", fim_steps, "descent steps");
    fimc->add_option("--lr", fim_lr, "initial step length");
    fimc->add_option("--sign", sign, "min | max")->check(CLI::IsMember({"min", "max"}));
    fimc->add_option("--index", index, "seed image index in the test set");

    auto* land = ana->add_subcommand("landscape", "adversarial loss over a random weight plane");
    add_common(land, common);
    std::size_t grid = 11, samples = 64;
    double span = 1.0;
    land->add_option("--ckpt", ckpt, "finetuned checkpoint")->required();
    land->add_option("--grid", grid, "points per axis")->check(CLI::PositiveNumber);
    land->add_option("--span", span, "alpha, beta range [-span, span]");
    land->add_option("--samples", samples, "test images used for the loss")->check(CLI::PositiveNumber);
    land->add_option("--eps", eps, "attack radius in 1/255 units (default: ra_epsilon_255)");
    land->add_option("--steps", steps, "attack steps (default: ra_steps)");

    auto* abl = app.add_subcommand("ablate", "pretrain/finetune/eval grid over one factor");
    add_common(abl, common);
    std::string kind;
    std::vector<std::string> recipes;
    abl->add_option("kind", kind, "views | lambda | klist | finetune_modes")
        ->required()
        ->check(CLI::IsMember({"views", "lambda", "klist", "finetune_modes"}));
    abl->add_option("--recipes", recipes, "view recipes for `views`, or `all` (default)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return 2;
    }

    try {
        ExperimentConfig cfg = resolve(common);
        Pipeline pipe(cfg);

        if (*pre) {
            std::vector<StageInput> inputs;
            fs::path table = pseudo;
            if (cfg.lambda > 0) {
                if (table.empty()) {
                    table = pipe.cluster().file("pseudo_labels.json");
                }
                inputs.push_back({"pseudo_labels", table});
            }
            report(run_into(common, cfg, "pretrain", pretrain_key(cfg), inputs,
                            [&](const fs::path& d) { return pipe.pretrain_into(d, table, resume); }));
        } else if (*sim) {
            report(run_into(common, cfg, "simclr", fpre_key(cfg), {},
                            [&](const fs::path& d) { return pipe.simclr_into(d, resume); }));
        } else if (*sup) {
            nlohmann::json key = data_model_key(cfg);
            key.update(to_json(cfg, {"supervised", "attack"}));
            report(run_into(common, cfg, "supervised_at", key, {},
                            [&](const fs::path& d) { return pipe.supervised_into(d, resume); }));
        } else if (*clu) {
            const fs::path enc = fpre_ckpt.empty() ? pipe.fpre_checkpoint() : fs::path(fpre_ckpt);
            report(run_into(common, cfg, "cluster", cluster_key(cfg), {{"fpre", enc}},
                            [&](const fs::path& d) { return pipe.cluster_into(d, enc); }));
        } else if (*fin) {
            if (!mode.empty()) {
                cfg.finetune_mode = mode;
            }
            Pipeline p(cfg);
            report(run_into(common, cfg, "finetune", finetune_key(cfg), {{"encoder", ckpt}},
                            [&](const fs::path& d) { return p.finetune_into(d, ckpt); }));
        } else if (*ev) {
            if (!eps.empty()) cfg.eval_epsilons_255 = eps;
            if (!steps.empty()) cfg.eval_steps = steps;
            if (step_size) cfg.eval_step_size_255 = *step_size;
            if (!attack_init.empty()) cfg.eval_attack_init = attack_init;
            Pipeline p(cfg);
            auto r = run_into(common, cfg, "eval", eval_key(cfg), {{"model", ckpt}},
                              [&](const fs::path& d) { return p.sweep_into(d, ckpt); });
            report(r);
            for (const auto& w : r.manifest.summary.at("warnings")) {
                std::cerr << "warning: " << w.get<std::string>() << "\n";
            }
        } else if (*freq) {
            const Real r = radius ? *radius : cfg.frequency_radius;
            nlohmann::json key = to_json(cfg, {"data"});
            key["radius"] = r;
            key["index"] = index;
            key["count"] = count;
            report(run_into(common, cfg, "analyze_freq", key, {}, [&](const fs::path& d) {
                const Tensor x = pick_images(pipe.test_data(), index, count);
                const auto band = fft_decompose(x, r);
                for (std::size_t i = 0; i < x.dim(0); ++i) {
                    const std::string ext = x.dim(1) == 1 ? ".pgm" : ".ppm";
                    const std::string stem = "img" + std::to_string(index + i);
                    write_image(d / (stem + "_x" + ext), image_of(x, i));
                    write_image(d / (stem + "_high" + ext), image_of(band.high, i), 0, 0);
                    write_image(d / (stem + "_low" + ext), image_of(band.low, i));
                }
                write_npy(d / "x.npy", x);
                write_npy(d / "x_high.npy", band.high);
                write_npy(d / "x_low.npy", band.low);
                return nlohmann::json{{"radius", r},
                                      {"images", x.dim(0)},
                                      {"high_max_abs", band.high.max_abs()}};
            }));
        } else if (*fimc) {
            nlohmann::json key = to_json(cfg, {"data"});
            key.update({{"unit", unit}, {"steps", fim_steps}, {"lr", fim_lr}, {"sign", sign}, {"index", index}});
            report(run_into(common, cfg, "analyze_fim", key, {{"model", ckpt}}, [&](const fs::path& d) {
                Checkpoint ck = load_checkpoint(ckpt);
                const Dataset test = adapt_dataset(pipe.test_data(), ck.model->config(), cfg.resize_inputs);
                const Tensor x0 = pick_images(test, index, 1);
                const auto r = fim(*ck.model, x0, unit, fim_steps, fim_lr, parse_fim_sign(sign));
                write_image(d / (std::string("fim") + (x0.dim(1) == 1 ? ".pgm" : ".ppm")), image_of(r.image, 0));
                write_npy(d / "fim.npy", r.image);
                write_text(d / "trajectory.json", nlohmann::json(r.trajectory).dump() + "\n");
                return nlohmann::json{{"unit", unit},
                                      {"sign", sign},
                                      {"accepted_steps", r.accepted_steps},
                                      {"start", r.trajectory.front()},
                                      {"end", r.trajectory.back()}};
            }));
        } else if (*land) {
            const Real e = eps.empty() ? cfg.ra_epsilon_255 : eps.front();
            const std::size_t s = steps.empty() ? cfg.ra_steps : steps.front();
            nlohmann::json key = to_json(cfg, {"data", "run"});
            key.update({{"grid", grid}, {"span", span}, {"samples", samples}, {"eps", e}, {"steps", s}});
            report(run_into(common, cfg, "analyze_landscape", key, {{"model", ckpt}}, [&](const fs::path& d) {
                Checkpoint ck = load_checkpoint(ckpt);
                if (!ck.model->has_classifier()) {
                    throw StateError("landscape needs a finetuned checkpoint with a classifier");
                }
                const Dataset test = adapt_dataset(pipe.test_data(), ck.model->config(), cfg.resize_inputs);
                const std::size_t n = std::min(samples, test.size());
                const Tensor x = test.images.slice_rows(0, n);
                const std::vector<int> y(test.labels.begin(), test.labels.begin() + static_cast<std::ptrdiff_t>(n));
                const PerturbBudget budget{e / 255.0, s, cfg.eval_step_size_255 / 255.0,
                                           parse_perturb_init(cfg.eval_attack_init)};
                const auto axis = LandscapeSpec::linspace(-span, span, grid);
                const auto g = loss_landscape(*ck.model, x, y, budget, {axis, axis}, cfg.seed);
                write_npy(d / "landscape.npy", g.losses);
                nlohmann::json grid_json = {{"alphas", g.alphas}, {"betas", g.betas}, {"seed", g.seed}};
                grid_json["losses"] = nlohmann::json::array();
                for (std::size_t i = 0; i < g.alphas.size(); ++i) {
                    nlohmann::json row = nlohmann::json::array();
                    for (std::size_t j = 0; j < g.betas.size(); ++j) {
                        const Real v = g.losses.at(i, j);
                        row.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
                    }
                    grid_json["losses"].push_back(row);
                }
                write_text(d / "landscape.json", grid_json.dump() + "\n");
                Series a{"beta=0", {}, {}}, b{"alpha=0", {}, {}};
                const std::size_t mid = grid / 2;
                for (std::size_t i = 0; i < grid; ++i) {
                    a.x.push_back(g.alphas[i]);
                    a.y.push_back(g.losses.at(i, mid));
                    b.x.push_back(g.betas[i]);
                    b.y.push_back(g.losses.at(mid, i));
                }
                write_svg_plot(d / "landscape_slices.svg", "Adversarial loss slices", "step along direction",
                               "loss", {a, b});
                for (const auto& w : g.warnings) {
                    std::cerr << "warning: " << w << "\n";
                }
                return nlohmann::json{{"center_loss", g.losses.at(mid, mid)}, {"warnings", g.warnings}};
            }));
        } else if (*abl) {
            if (!recipes.empty() && !(recipes.size() == 1 && recipes[0] == "all")) {
                cfg.ablate_recipes = recipes;
            }
            const auto k = parse_ablation_kind(kind);
            const fs::path out = common.out.empty() ? artifact_root() / "ablations" : fs::path(common.out);
            std::size_t failed = 0;
            const auto rows = run_ablation(k, cfg, out, artifact_root(), [&](const AblationRow& r) {
                std::cerr << r.setting << " [" << r.tag << "] SA=" << r.sa << " RA=" << r.ra << " " << r.status
                          << "\n";
                failed += r.status == "ok" ? 0 : 1;
            });
            std::cout << ablation_markdown(k, rows);
            if (failed > 0) {
                std::cerr << "error[ablation]: " << failed << " of " << rows.size() << " cells failed\n";
                return 1;
            }
        }
    } catch (const advcl::Error& e) {
        std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error[io]: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
