#ifndef ADVCL_EXPERIMENT_HPP
#define ADVCL_EXPERIMENT_HPP

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "clusterfit.hpp"
#include "config.hpp"
#include "evaluate.hpp"
#include "finetune.hpp"
#include "io.hpp"
#include "pretrain.hpp"
#include "version.hpp"

namespace advcl {

namespace fs = std::filesystem;

// $ADVCL_ARTIFACT_ROOT, or ./artifacts.
[[nodiscard]] inline fs::path artifact_root()
{
    const char* env = std::getenv("ADVCL_ARTIFACT_ROOT");
    return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("artifacts");
}

[[nodiscard]] inline std::string hash_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::uint64_t h = 14695981039346656037ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h = (h ^ static_cast<unsigned char>(buf[i])) * 1099511628211ULL;
        }
    }
    return hex16(h);
}

// Keys of `full` whose name is listed.
[[nodiscard]] inline nlohmann::json pick(const nlohmann::json& full, std::initializer_list<const char*> names)
{
    nlohmann::json j = nlohmann::json::object();
    for (const char* n : names) {
        j[n] = full.at(n);
    }
    return j;
}

// One manifest.json per stage directory. Holds everything needed to rerun the
// stage; no wall-clock fields so reruns produce identical files.
struct RunManifest {
    std::string stage;
    std::string cache_key;
    std::string code_version = kCodeVersion;
    nlohmann::json config = nlohmann::json::object();  // fully resolved flat config
    nlohmann::json inputs = nlohmann::json::object();  // name -> {path, hash}
    nlohmann::json summary = nlohmann::json::object();
    std::string status = "complete";

    [[nodiscard]] nlohmann::json to_json() const
    {
        return {{"stage", stage},   {"cache_key", cache_key}, {"code_version", code_version}, {"config", config},
                {"inputs", inputs}, {"summary", summary},     {"status", status}};
    }

    [[nodiscard]] static RunManifest from_json(const nlohmann::json& j)
    {
        RunManifest m;
        m.stage = j.at("stage").get<std::string>();
        m.cache_key = j.value("cache_key", "");
        m.code_version = j.value("code_version", "");
        m.config = j.value("config", nlohmann::json::object());
        m.inputs = j.value("inputs", nlohmann::json::object());
        m.summary = j.value("summary", nlohmann::json::object());
        m.status = j.value("status", "");
        return m;
    }
};

inline void write_manifest(const fs::path& dir, const RunManifest& m)
{
    const fs::path tmp = dir / "manifest.json.tmp";
    write_text(tmp, m.to_json().dump(2) + "\n");
    fs::rename(tmp, dir / "manifest.json");
}

[[nodiscard]] inline std::optional<RunManifest> read_manifest(const fs::path& dir)
{
    const fs::path p = dir / "manifest.json";
    if (!fs::exists(p)) {
        return std::nullopt;
    }
    try {
        return RunManifest::from_json(nlohmann::json::parse(read_text(p)));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt manifest " + p.string() + ": " + e.what());
    }
}

struct StageRecord {
    std::string stage;
    fs::path dir;
    RunManifest manifest;
    bool cached = false;

    [[nodiscard]] fs::path file(const std::string& name) const { return dir / name; }
};

struct StageInput {
    std::string name;
    fs::path path;
};

// Runs `body(dir)` and writes the manifest; body returns the stage summary.
using StageBody = std::function<nlohmann::json(const fs::path& dir)>;

[[nodiscard]] inline RunManifest make_manifest(const std::string& stage, const nlohmann::json& key,
                                               const ExperimentConfig& cfg, const std::vector<StageInput>& inputs)
{
    RunManifest m;
    m.stage = stage;
    m.config = to_json(cfg);
    nlohmann::json key_doc = {{"stage", stage}, {"key", key}, {"code_version", kCodeVersion}};
    for (const auto& in : inputs) {
        const std::string h = hash_file(in.path);
        m.inputs[in.name] = {{"path", in.path.string()}, {"hash", h}};
        key_doc["inputs"][in.name] = h;
    }
    m.cache_key = hex16(fnv1a(key_doc.dump()));
    return m;
}

inline StageRecord execute_stage(const fs::path& dir, RunManifest m, const StageBody& body)
{
    fs::create_directories(dir);
    m.summary = body(dir);
    m.status = "complete";
    write_manifest(dir, m);
    return {m.stage, dir, std::move(m), false};
}

// Content-addressed stage: <root>/<stage>/<key>. A complete manifest means the
// stage is reused as is; otherwise the body runs (and may resume from what an
// interrupted attempt left in the directory).
inline StageRecord cached_stage(const fs::path& root, const std::string& stage, const nlohmann::json& key,
                                const ExperimentConfig& cfg, const std::vector<StageInput>& inputs,
                                const StageBody& body)
{
    RunManifest m = make_manifest(stage, key, cfg, inputs);
    const fs::path dir = root / stage / m.cache_key;
    if (auto prev = read_manifest(dir); prev && prev->status == "complete" && prev->cache_key == m.cache_key) {
        return {stage, dir, std::move(*prev), true};
    }
    return execute_stage(dir, std::move(m), body);
}

// ------------------------------------------------------------------ stage keys

[[nodiscard]] inline nlohmann::json data_model_key(const ExperimentConfig& c)
{
    return to_json(c, {"data", "model", "run"});
}

[[nodiscard]] inline nlohmann::json fpre_key(const ExperimentConfig& c)
{
    const auto full = to_json(c);
    nlohmann::json k = data_model_key(c);
    k.update(to_json(c, {"augment"}));
    k.update(pick(full, {"batch_size", "lr", "warmup_start_lr", "warmup_epochs", "momentum", "weight_decay",
                         "temperature", "fpre_epochs", "checkpoint_every"}));
    return k;
}

[[nodiscard]] inline nlohmann::json cluster_key(const ExperimentConfig& c)
{
    nlohmann::json k = to_json(c, {"data", "run"});
    k.update(pick(to_json(c), {"k_list", "kmeans_max_iterations", "kmeans_tolerance"}));
    return k;
}

[[nodiscard]] inline nlohmann::json pretrain_key(const ExperimentConfig& c)
{
    nlohmann::json k = data_model_key(c);
    k.update(to_json(c, {"augment", "attack", "pretrain"}));
    if (c.lambda > 0) {
        k["k_list"] = c.k_list;
    }
    return k;
}

[[nodiscard]] inline nlohmann::json finetune_key(const ExperimentConfig& c)
{
    nlohmann::json k = to_json(c, {"data", "run", "augment", "attack", "finetune"});
    return k;
}

[[nodiscard]] inline nlohmann::json eval_key(const ExperimentConfig& c) { return to_json(c, {"data", "run", "eval"}); }

// ------------------------------------------------------------------ pipeline

struct PointEval {
    Real sa = 0;
    Real ra = 0;
};

// Lazily loads the datasets of one config and runs stages into the artifact
// cache. Prerequisite stages are always reused when their key matches.
class Pipeline {
public:
    explicit Pipeline(ExperimentConfig cfg, fs::path root = artifact_root())
        : cfg_(std::move(cfg)), root_(std::move(root))
    {
    }

    [[nodiscard]] const ExperimentConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const fs::path& root() const noexcept { return root_; }

    [[nodiscard]] const Dataset& train_data()
    {
        if (!train_) {
            train_ = load_dataset(cfg_.train_spec());
            if (cfg_.input_size != 0 && cfg_.input_size != train_->resolution()) {
                train_->images = clamp(resize_batch(train_->images, cfg_.input_size), 0.0, 1.0);
            }
        }
        return *train_;
    }

    [[nodiscard]] const Dataset& test_data()
    {
        if (!test_) {
            test_ = load_dataset(cfg_.test_spec());
        }
        return *test_;
    }

    [[nodiscard]] EncoderConfig encoder()
    {
        return cfg_.encoder_config(train_data().channels(), train_data().resolution());
    }

    // ---- stage bodies, writing into an explicit directory

    [[nodiscard]] nlohmann::json simclr_into(const fs::path& dir, const fs::path& resume = {})
    {
        const auto pc = cfg_.fpre_config(encoder());
        auto r = simclr_pretrain(pc, train_data(), train_options(dir, fpre_key(cfg_), resume));
        return training_summary(r);
    }

    [[nodiscard]] nlohmann::json cluster_into(const fs::path& dir, const fs::path& fpre_ckpt)
    {
        const auto features = extract_features(fpre_ckpt, train_data());
        KMeansOptions ko{cfg_.kmeans_max_iterations, cfg_.kmeans_tolerance};
        const auto table = build_pseudo_tables(features, cfg_.k_list, cfg_.seed, hash_file(fpre_ckpt), ko);
        save_pseudo_table(dir / "pseudo_labels.json", table);
        nlohmann::json inertia = nlohmann::json::object();
        for (const auto& e : table.entries) {
            inertia[std::to_string(e.k)] = e.inertia;
        }
        return {{"num_samples", table.num_samples}, {"k_list", table.k_list()}, {"inertia", inertia}};
    }

    [[nodiscard]] nlohmann::json pretrain_into(const fs::path& dir, const fs::path& table_path,
                                               const fs::path& resume = {})
    {
        const auto pc = cfg_.pretrain_config(encoder());
        std::optional<PseudoLabelTable> table;
        if (pc.lambda > 0) {
            if (table_path.empty()) {
                throw StateError("lambda > 0 requires a pseudo-label table");
            }
            table = load_pseudo_table(table_path);
        }
        auto r = pretrain(pc, train_data(), table ? &*table : nullptr, train_options(dir, pretrain_key(cfg_), resume));
        return training_summary(r);
    }

    [[nodiscard]] nlohmann::json supervised_into(const fs::path& dir, const fs::path& resume = {})
    {
        nlohmann::json key = data_model_key(cfg_);
        key.update(to_json(cfg_, {"supervised", "attack"}));
        auto r = supervised_at(cfg_.supervised_config(encoder()), train_data(), train_options(dir, key, resume));
        return training_summary(r);
    }

    [[nodiscard]] nlohmann::json finetune_into(const fs::path& dir, const fs::path& ckpt)
    {
        TrainOptions o;
        o.output_dir = dir;
        o.config_hash = hex16(fnv1a(finetune_key(cfg_).dump()));
        auto r = finetune(ckpt, train_data(), cfg_.finetune_config(), o);
        return {{"mode", to_string(r.mode)},
                {"best_epoch", r.best_epoch},
                {"best_val_score", r.best_score},
                {"encoder_unchanged", r.encoder_hash_before == r.encoder_hash_after},
                {"checkpoint", (dir / "finetuned.ckpt").string()}};
    }

    [[nodiscard]] PointEval point_eval(const RobustModel& model)
    {
        const Dataset test = adapt_dataset(test_data(), model.config(), cfg_.resize_inputs);
        const auto opts = cfg_.eval_options();
        return {eval_sa(model, test, opts.batch_size), eval_ra(model, test, cfg_.ra_budget(), opts)};
    }

    [[nodiscard]] nlohmann::json sweep_into(const fs::path& dir, const fs::path& ckpt)
    {
        Checkpoint ck = load_checkpoint(ckpt);
        if (!ck.model->has_classifier()) {
            throw StateError("checkpoint " + ckpt.string() + " has no classifier head; run finetune first");
        }
        const Dataset test = adapt_dataset(test_data(), ck.model->config(), cfg_.resize_inputs);
        EvalReport r = eval_sweep(*ck.model, test, cfg_.eval_epsilons(), cfg_.eval_steps, cfg_.eval_options());
        r.model_fingerprint = hex16(ck.model->fingerprint());
        write_eval_report(dir, r);
        return {{"sa", r.sa}, {"warnings", r.warnings}};
    }

    // ---- cached stages

    [[nodiscard]] fs::path fpre_checkpoint()
    {
        if (!cfg_.fpre_ckpt.empty()) {
            return cfg_.fpre_ckpt;
        }
        auto rec = cached_stage(root_, "simclr", fpre_key(cfg_), cfg_, {},
                                [&](const fs::path& d) { return simclr_into(d, resume_point(d)); });
        return rec.file("last.ckpt");
    }

    [[nodiscard]] StageRecord cluster()
    {
        const fs::path fpre = fpre_checkpoint();
        return cached_stage(root_, "cluster", cluster_key(cfg_), cfg_, {{"fpre", fpre}},
                            [&](const fs::path& d) { return cluster_into(d, fpre); });
    }

    [[nodiscard]] StageRecord pretrain_stage()
    {
        std::vector<StageInput> inputs;
        fs::path table;
        if (cfg_.lambda > 0) {
            table = cluster().file("pseudo_labels.json");
            inputs.push_back({"pseudo_labels", table});
        }
        return cached_stage(root_, "pretrain", pretrain_key(cfg_), cfg_, inputs,
                            [&](const fs::path& d) { return pretrain_into(d, table, resume_point(d)); });
    }

    [[nodiscard]] StageRecord finetune_stage(const fs::path& ckpt)
    {
        return cached_stage(root_, "finetune", finetune_key(cfg_), cfg_, {{"encoder", ckpt}},
                            [&](const fs::path& d) { return finetune_into(d, ckpt); });
    }

    [[nodiscard]] StageRecord point_eval_stage(const fs::path& ckpt)
    {
        return cached_stage(root_, "eval_point", eval_key(cfg_), cfg_, {{"model", ckpt}}, [&](const fs::path& d) {
            Checkpoint ck = load_checkpoint(ckpt);
            const auto p = point_eval(*ck.model);
            nlohmann::json s = {{"sa", p.sa},
                                {"ra", p.ra},
                                {"ra_epsilon_255", cfg_.ra_epsilon_255},
                                {"ra_steps", cfg_.ra_steps}};
            write_text(d / "eval.json", s.dump(2) + "\n");
            return s;
        });
    }

private:
    [[nodiscard]] static fs::path resume_point(const fs::path& dir)
    {
        return fs::exists(dir / "last.ckpt") ? dir / "last.ckpt" : fs::path{};
    }

    [[nodiscard]] static TrainOptions train_options(const fs::path& dir, const nlohmann::json& key,
                                                    const fs::path& resume)
    {
        TrainOptions o;
        o.output_dir = dir;
        o.config_hash = hex16(fnv1a(key.dump()));
        o.resume_from = resume;
        return o;
    }

    [[nodiscard]] static nlohmann::json training_summary(const TrainResult& r)
    {
        nlohmann::json last = r.history.empty() ? nlohmann::json::object() : to_json(r.history.back());
        return {{"epochs", r.history.size()},
                {"final", last},
                {"fingerprint", hex16(r.model->fingerprint())},
                {"checkpoint", r.checkpoint.string()}};
    }

    ExperimentConfig cfg_;
    fs::path root_;
    std::optional<Dataset> train_;
    std::optional<Dataset> test_;
};

// ------------------------------------------------------------------ ablations

enum class AblationKind { views, lambda, klist, finetune_modes };

[[nodiscard]] inline AblationKind parse_ablation_kind(const std::string& s)
{
    if (s == "views") return AblationKind::views;
    if (s == "lambda") return AblationKind::lambda;
    if (s == "klist") return AblationKind::klist;
    if (s == "finetune_modes") return AblationKind::finetune_modes;
    throw ConfigError("unknown ablation '" + s + "' (views | lambda | klist | finetune_modes)");
}

[[nodiscard]] inline const char* to_string(AblationKind k)
{
    switch (k) {
    case AblationKind::views: return "views";
    case AblationKind::lambda: return "lambda";
    case AblationKind::klist: return "klist";
    case AblationKind::finetune_modes: return "finetune_modes";
    }
    return "?";
}

struct AblationRow {
    std::string setting;
    std::string tag;
    std::string views;
    Real lambda = 0;
    std::vector<std::size_t> k_list;
    std::string finetune_mode;
    Real sa = 0;
    Real ra = 0;
    std::string status = "ok";  // or "failed: <message>"
};

struct AblationCell {
    std::string setting;
    std::string tag;
    ExperimentConfig cfg;
};

[[nodiscard]] inline std::string join_k(const std::vector<std::size_t>& ks)
{
    std::string s;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        s += (i ? " " : "") + std::to_string(ks[i]);
    }
    return s;
}

[[nodiscard]] inline std::vector<AblationCell> ablation_cells(AblationKind kind, const ExperimentConfig& base)
{
    std::vector<AblationCell> cells;
    auto lambda_tag = [](const ExperimentConfig& c) {
        if (c.lambda == 0) return std::string("w/o ClusterFit");
        return c.k_list.size() == 1 ? "K=" + std::to_string(c.k_list[0]) : std::string("Ensemble");
    };
    switch (kind) {
    case AblationKind::views: {
        std::vector<std::string> names = base.ablate_recipes;
        if (names.empty()) {
            for (auto r : kAllViewRecipes) {
                names.emplace_back(to_string(r));
            }
        }
        for (const auto& n : names) {
            ExperimentConfig c = base;
            c.views = to_string(parse_view_recipe(n));
            cells.push_back({c.views, describe(parse_view_recipe(n)), c});
        }
        break;
    }
    case AblationKind::lambda:
        for (Real l : base.ablate_lambdas) {
            ExperimentConfig c = base;
            c.lambda = l;
            std::ostringstream s;
            s << "lambda=" << l;
            cells.push_back({s.str(), lambda_tag(c), c});
        }
        break;
    case AblationKind::klist: {
        ExperimentConfig none = base;
        none.lambda = 0;
        cells.push_back({"lambda=0", lambda_tag(none), none});
        if (base.k_list.size() > 1) {
            for (auto k : base.k_list) {
                ExperimentConfig c = base;
                c.k_list = {k};
                cells.push_back({"K=" + std::to_string(k), lambda_tag(c), c});
            }
        }
        cells.push_back({"K=[" + join_k(base.k_list) + "]", lambda_tag(base), base});
        break;
    }
    case AblationKind::finetune_modes:
        for (const auto& m : base.ablate_finetune_modes) {
            ExperimentConfig c = base;
            c.finetune_mode = to_string(parse_finetune_mode(m));
            cells.push_back({c.finetune_mode, c.finetune_mode, c});
        }
        break;
    }
    return cells;
}

// RFC 4180 quoting: only fields holding a comma, quote or newline are wrapped.
[[nodiscard]] inline std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string q = "\"";
    for (char ch : s) {
        q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    }
    return q + '"';
}

[[nodiscard]] inline std::string ablation_csv(const std::vector<AblationRow>& rows)
{
    std::ostringstream o;
    o << std::setprecision(6) << "setting,tag,views,lambda,k_list,finetune_mode,sa,ra,status\n";
    for (const auto& r : rows) {
        o << csv_field(r.setting) << ',' << csv_field(r.tag) << ',' << r.views << ',' << r.lambda << ','
          << join_k(r.k_list) << ',' << r.finetune_mode << ',' << r.sa << ',' << r.ra << ',' << csv_field(r.status)
          << '\n';
    }
    return o.str();
}

[[nodiscard]] inline std::string ablation_markdown(AblationKind kind, const std::vector<AblationRow>& rows)
{
    std::ostringstream o;
    o << std::fixed << std::setprecision(2);
    o << "# Ablation: " << to_string(kind) << "\n\n";
    o << "| setting | tag | SA (%) | RA (%) | status |\n|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        o << "| " << r.setting << " | " << r.tag << " | " << 100 * r.sa << " | " << 100 * r.ra << " | " << r.status
          << " |\n";
    }
    return o.str();
}

// Runs every cell through pretrain -> finetune -> eval, reusing cached stages,
// and rewrites ablation_<kind>.{csv,md} after each row so partial results
// survive an interruption. A failing cell is recorded and the grid continues.
inline std::vector<AblationRow> run_ablation(AblationKind kind, const ExperimentConfig& base, const fs::path& out_dir,
                                             const fs::path& root = artifact_root(),
                                             const std::function<void(const AblationRow&)>& on_row = {})
{
    std::vector<AblationRow> rows;
    const std::string stem = std::string("ablation_") + to_string(kind);
    for (auto& cell : ablation_cells(kind, base)) {
        AblationRow row;
        row.setting = cell.setting;
        row.tag = cell.tag;
        row.views = cell.cfg.views;
        row.lambda = cell.cfg.lambda;
        row.k_list = cell.cfg.lambda > 0 ? cell.cfg.k_list : std::vector<std::size_t>{};
        row.finetune_mode = cell.cfg.finetune_mode;
        try {
            Pipeline p(cell.cfg, root);
            const auto pre = p.pretrain_stage();
            const auto ft = p.finetune_stage(pre.file("last.ckpt"));
            const auto ev = p.point_eval_stage(ft.file("finetuned.ckpt"));
            row.sa = ev.manifest.summary.at("sa").get<Real>();
            row.ra = ev.manifest.summary.at("ra").get<Real>();
        } catch (const Error& e) {
            row.status = "failed: " + std::string(e.what());
        }
        rows.push_back(row);
        write_text(out_dir / (stem + ".csv"), ablation_csv(rows));
        write_text(out_dir / (stem + ".md"), ablation_markdown(kind, rows));
        if (on_row) {
            on_row(row);
        }
    }
    return rows;
}

} // namespace advcl

#endif // ADVCL_EXPERIMENT_HPP
