#ifndef ADVCL_CONFIG_HPP
#define ADVCL_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "attacks.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "evaluate.hpp"
#include "finetune.hpp"
#include "model.hpp"
#include "pretrain.hpp"

namespace advcl {

// Every configurable value of an experiment, one field per flat config key.
// Epsilons and step sizes are given in 1/255 pixel units.
struct ExperimentConfig {
    // data
    std::string dataset = "synthetic";
    std::string data_root;
    std::size_t image_size = 16;
    std::size_t channels = 1;
    std::size_t synthetic_n = 512;
    std::size_t synthetic_test_n = 256;
    std::size_t synthetic_classes = 2;
    Real synthetic_noise = 0.05;
    std::size_t synthetic_seed = 0;
    std::vector<int> class_subset;
    std::size_t max_train_samples = 0;
    std::size_t max_test_samples = 0;
    // model
    std::string architecture = "tiny_cnn";
    std::size_t feature_dim = 128;
    std::size_t projection_dim = 64;
    std::size_t width = 32;
    std::size_t bn_branches = 3;
    std::size_t input_size = 0;  // 0: the training dataset's resolution
    // run
    std::size_t seed = 0;
    // augment
    Real crop_scale_min = 0.2;
    Real crop_scale_max = 1.0;
    Real hflip_prob = 0.5;
    std::vector<Real> jitter_strengths{0.4, 0.4, 0.4, 0.1};
    Real jitter_prob = 0.8;
    Real grayscale_prob = 0.2;
    // attack (pretraining and adversarial finetuning)
    Real epsilon_255 = 8;
    Real step_size_255 = 2;
    std::size_t attack_steps = 5;
    std::string attack_init = "uniform_random";
    std::string attack_bn_mode = "eval";
    // pretrain
    std::size_t pretrain_epochs = 20;
    std::size_t batch_size = 64;
    Real lr = 0.5;
    Real warmup_start_lr = 0.01;
    Real warmup_epochs = 10;
    Real momentum = 0.9;
    Real weight_decay = 1e-4;
    Real temperature = 0.5;
    Real lambda = 0.2;
    std::string views = "three_view_high";
    Real frequency_radius = 8;
    bool clamp_frequency_views = false;
    bool shared_optimizer = true;
    Real pseudo_head_lr = 0.5;
    std::size_t checkpoint_every = 1;
    // cluster
    std::vector<std::size_t> k_list{2, 10, 50, 100, 500};
    std::size_t fpre_epochs = 20;
    std::string fpre_ckpt;
    std::size_t kmeans_max_iterations = 300;
    Real kmeans_tolerance = 1e-6;
    // supervised adversarial training baseline
    std::size_t sup_epochs = 25;
    Real sup_lr = 0.1;
    Real sup_weight_decay = 5e-4;
    std::size_t sup_attack_steps = 10;
    // finetune
    std::string finetune_mode = "slf";
    std::size_t finetune_epochs = 25;
    std::size_t finetune_batch_size = 128;
    Real finetune_lr = 0.1;
    std::vector<Real> finetune_milestones{15, 20};
    Real finetune_gamma = 0.1;
    Real finetune_momentum = 0.9;
    Real finetune_weight_decay = 2e-4;
    std::size_t finetune_attack_steps = 10;
    Real trades_beta = 6.0;
    bool freeze_bn_stats = true;
    bool cache_features = true;
    bool finetune_augment = false;
    Real val_fraction = 0.1;
    std::size_t select_attack_steps = 10;
    bool resize_inputs = true;
    // eval
    std::vector<Real> eval_epsilons_255{0, 2, 4, 8, 16};
    std::vector<std::size_t> eval_steps{1, 5, 10, 20};
    Real eval_step_size_255 = 2;
    std::string eval_attack_init = "zero";
    std::size_t eval_batch_size = 256;
    Real ra_epsilon_255 = 8;
    std::size_t ra_steps = 20;
    // ablate
    std::vector<Real> ablate_lambdas{0, 0.2};
    std::vector<std::string> ablate_recipes;  // empty: every recipe
    std::vector<std::string> ablate_finetune_modes{"slf", "alf", "aff"};

    // ------------------------------------------------------------ derived configs

    [[nodiscard]] DatasetSpec train_spec() const { return data_spec(Split::train); }
    [[nodiscard]] DatasetSpec test_spec() const { return data_spec(Split::test); }

    [[nodiscard]] AugmentConfig augment_config() const
    {
        if (jitter_strengths.size() != 4) {
            throw ConfigError("jitter_strengths needs 4 values (brightness, contrast, saturation, hue)");
        }
        AugmentConfig a;
        a.crop_scale_min = crop_scale_min;
        a.crop_scale_max = crop_scale_max;
        a.hflip_prob = hflip_prob;
        a.jitter_strengths = {jitter_strengths[0], jitter_strengths[1], jitter_strengths[2], jitter_strengths[3]};
        a.jitter_prob = jitter_prob;
        a.grayscale_prob = grayscale_prob;
        a.seed = seed;
        a.validate();
        return a;
    }

    [[nodiscard]] EncoderConfig encoder_config(std::size_t data_channels, std::size_t data_resolution) const
    {
        EncoderConfig e;
        e.architecture = parse_architecture(architecture);
        e.feature_dim = feature_dim;
        e.projection_dim = projection_dim;
        e.input_channels = data_channels;
        e.input_size = input_size == 0 ? data_resolution : input_size;
        e.width = width;
        e.bn_branches = bn_branches;
        e.init_seed = seed;
        e.validate();
        return e;
    }

    [[nodiscard]] PerturbBudget training_budget(std::size_t steps) const
    {
        return {epsilon_255 / 255.0, steps, step_size_255 / 255.0, parse_perturb_init(attack_init)};
    }

    [[nodiscard]] PretrainConfig pretrain_config(const EncoderConfig& enc) const
    {
        PretrainConfig p;
        p.encoder = enc;
        p.epochs = pretrain_epochs;
        p.batch_size = batch_size;
        p.lr = lr;
        p.warmup_start_lr = warmup_start_lr;
        p.warmup_epochs = warmup_epochs;
        p.momentum = momentum;
        p.weight_decay = weight_decay;
        p.temperature = temperature;
        p.lambda = lambda;
        p.budget = training_budget(attack_steps);
        p.views = parse_view_recipe(views);
        p.k_list = k_list;
        p.seed = seed;
        p.augment = augment_config();
        p.frequency_radius = frequency_radius;
        p.clamp_frequency_views = clamp_frequency_views;
        p.attack_bn_mode = parse_attack_bn_mode(attack_bn_mode);
        p.shared_optimizer = shared_optimizer;
        p.pseudo_head_lr = pseudo_head_lr;
        p.checkpoint_every = checkpoint_every;
        p.validate();
        return p;
    }

    // SimCLR run used as the clustering feature extractor.
    [[nodiscard]] PretrainConfig fpre_config(const EncoderConfig& enc) const
    {
        PretrainConfig p = pretrain_config(enc);
        p.epochs = fpre_epochs;
        p.lambda = 0;
        return p;
    }

    [[nodiscard]] SupervisedConfig supervised_config(const EncoderConfig& enc) const
    {
        SupervisedConfig s;
        s.encoder = enc;
        s.epochs = sup_epochs;
        s.batch_size = batch_size;
        s.lr = sup_lr;
        s.milestones = finetune_milestones;
        s.gamma = finetune_gamma;
        s.momentum = momentum;
        s.weight_decay = sup_weight_decay;
        s.budget = training_budget(sup_attack_steps);
        s.attack_bn_mode = parse_attack_bn_mode(attack_bn_mode);
        s.augment = augment_config();
        s.seed = seed;
        s.checkpoint_every = checkpoint_every;
        s.validate();
        return s;
    }

    [[nodiscard]] FinetuneConfig finetune_config() const
    {
        FinetuneConfig f;
        f.mode = parse_finetune_mode(finetune_mode);
        f.epochs = finetune_epochs;
        f.batch_size = finetune_batch_size;
        f.lr = finetune_lr;
        f.milestones = finetune_milestones;
        f.gamma = finetune_gamma;
        f.momentum = finetune_momentum;
        f.weight_decay = finetune_weight_decay;
        f.budget = training_budget(finetune_attack_steps);
        f.trades_beta = trades_beta;
        f.attack_bn_mode = parse_attack_bn_mode(attack_bn_mode);
        f.freeze_bn_stats = freeze_bn_stats;
        f.cache_features = cache_features;
        f.augment_inputs = finetune_augment;
        f.augment = augment_config();
        f.val_fraction = val_fraction;
        f.select_attack_steps = select_attack_steps;
        f.resize_inputs = resize_inputs;
        f.seed = seed;
        f.validate();
        return f;
    }

    [[nodiscard]] EvalOptions eval_options() const
    {
        EvalOptions o;
        o.step_size = eval_step_size_255 / 255.0;
        o.init = parse_perturb_init(eval_attack_init);
        o.seed = seed;
        o.batch_size = eval_batch_size;
        o.bn_mode = AttackBnMode::eval;
        return o;
    }

    [[nodiscard]] std::vector<Real> eval_epsilons() const
    {
        std::vector<Real> out;
        for (Real e : eval_epsilons_255) {
            out.push_back(e / 255.0);
        }
        return out;
    }

    [[nodiscard]] PerturbBudget ra_budget() const
    {
        return {ra_epsilon_255 / 255.0, ra_steps, eval_step_size_255 / 255.0, parse_perturb_init(eval_attack_init)};
    }

private:
    [[nodiscard]] DatasetSpec data_spec(Split split) const
    {
        DatasetSpec d;
        d.name = dataset;
        d.split = split;
        d.root = data_root;
        d.synthetic.n = split == Split::train ? synthetic_n : synthetic_test_n;
        d.synthetic.classes = synthetic_classes;
        d.synthetic.image_size = image_size;
        d.synthetic.channels = channels;
        d.synthetic.seed = synthetic_seed;
        d.synthetic.noise = synthetic_noise;
        d.class_subset = class_subset;
        d.max_samples = split == Split::train ? max_train_samples : max_test_samples;
        return d;
    }
};

// ------------------------------------------------------------------ key registry

struct ConfigKey {
    using Member = std::variant<Real ExperimentConfig::*, std::size_t ExperimentConfig::*, bool ExperimentConfig::*,
                                std::string ExperimentConfig::*, std::vector<Real> ExperimentConfig::*,
                                std::vector<std::size_t> ExperimentConfig::*, std::vector<int> ExperimentConfig::*,
                                std::vector<std::string> ExperimentConfig::*>;
    const char* name;
    const char* section;
    Member member;
    const char* doc;
};

[[nodiscard]] inline const std::vector<ConfigKey>& config_keys()
{
    using C = ExperimentConfig;
    static const std::vector<ConfigKey> keys{
        {"dataset", "data", &C::dataset, "synthetic | cifar10 | cifar100 | stl10"},
        {"data_root", "data", &C::data_root, "directory holding the dataset files"},
        {"image_size", "data", &C::image_size, "synthetic image side length"},
        {"channels", "data", &C::channels, "synthetic channel count (1 or 3)"},
        {"synthetic_n", "data", &C::synthetic_n, "synthetic training set size"},
        {"synthetic_test_n", "data", &C::synthetic_test_n, "synthetic test set size"},
        {"synthetic_classes", "data", &C::synthetic_classes, "synthetic class count"},
        {"synthetic_noise", "data", &C::synthetic_noise, "stddev of synthetic pixel noise"},
        {"synthetic_seed", "data", &C::synthetic_seed, "synthetic generator seed"},
        {"class_subset", "data", &C::class_subset, "keep only these classes (relabelled in order)"},
        {"max_train_samples", "data", &C::max_train_samples, "cap on training samples (0 = all)"},
        {"max_test_samples", "data", &C::max_test_samples, "cap on test samples (0 = all)"},
        {"architecture", "model", &C::architecture, "tiny_cnn | resnet18"},
        {"feature_dim", "model", &C::feature_dim, "encoder output width"},
        {"projection_dim", "model", &C::projection_dim, "projection head output width"},
        {"width", "model", &C::width, "channels of the first encoder stage"},
        {"bn_branches", "model", &C::bn_branches, "3 = routed TriBN, 1 = single BN"},
        {"input_size", "model", &C::input_size, "encoder input resolution (0 = dataset's)"},
        {"seed", "run", &C::seed, "master seed for init, batching, augmentation and attacks"},
        {"crop_scale_min", "augment", &C::crop_scale_min, "random resized crop min area fraction"},
        {"crop_scale_max", "augment", &C::crop_scale_max, "random resized crop max area fraction"},
        {"hflip_prob", "augment", &C::hflip_prob, "horizontal flip probability"},
        {"jitter_strengths", "augment", &C::jitter_strengths, "brightness, contrast, saturation, hue"},
        {"jitter_prob", "augment", &C::jitter_prob, "colour jitter probability"},
        {"grayscale_prob", "augment", &C::grayscale_prob, "grayscale probability"},
        {"epsilon_255", "attack", &C::epsilon_255, "training attack radius in 1/255 units"},
        {"step_size_255", "attack", &C::step_size_255, "training attack step in 1/255 units"},
        {"attack_steps", "attack", &C::attack_steps, "PGD steps during pretraining"},
        {"attack_init", "attack", &C::attack_init, "zero | uniform_random"},
        {"attack_bn_mode", "attack", &C::attack_bn_mode, "normalization mode inside attacks: eval | train"},
        {"pretrain_epochs", "pretrain", &C::pretrain_epochs, "pretraining epochs"},
        {"batch_size", "pretrain", &C::batch_size, "pretraining batch size"},
        {"lr", "pretrain", &C::lr, "peak learning rate"},
        {"warmup_start_lr", "pretrain", &C::warmup_start_lr, "learning rate at epoch 0"},
        {"warmup_epochs", "pretrain", &C::warmup_epochs, "linear warm-up length"},
        {"momentum", "pretrain", &C::momentum, "SGD momentum"},
        {"weight_decay", "pretrain", &C::weight_decay, "SGD weight decay"},
        {"temperature", "pretrain", &C::temperature, "contrastive temperature"},
        {"lambda", "pretrain", &C::lambda, "weight of the pseudo-label CE regularizer"},
        {"views", "pretrain", &C::views, "view recipe"},
        {"frequency_radius", "pretrain", &C::frequency_radius, "low/high frequency split radius"},
        {"clamp_frequency_views", "pretrain", &C::clamp_frequency_views, "clamp x_h / x_l to [0,1]"},
        {"shared_optimizer", "pretrain", &C::shared_optimizer, "pseudo heads share the encoder optimizer"},
        {"pseudo_head_lr", "pretrain", &C::pseudo_head_lr, "pseudo-head peak lr if not shared"},
        {"checkpoint_every", "pretrain", &C::checkpoint_every, "epochs between checkpoints"},
        {"k_list", "cluster", &C::k_list, "cluster counts of the pseudo-label ensemble"},
        {"fpre_epochs", "cluster", &C::fpre_epochs, "SimCLR epochs of the clustering encoder"},
        {"fpre_ckpt", "cluster", &C::fpre_ckpt, "external clustering encoder checkpoint"},
        {"kmeans_max_iterations", "cluster", &C::kmeans_max_iterations, "Lloyd iteration cap"},
        {"kmeans_tolerance", "cluster", &C::kmeans_tolerance, "centroid shift stopping threshold"},
        {"sup_epochs", "supervised", &C::sup_epochs, "supervised AT epochs"},
        {"sup_lr", "supervised", &C::sup_lr, "supervised AT learning rate"},
        {"sup_weight_decay", "supervised", &C::sup_weight_decay, "supervised AT weight decay"},
        {"sup_attack_steps", "supervised", &C::sup_attack_steps, "supervised AT PGD steps"},
        {"finetune_mode", "finetune", &C::finetune_mode, "slf | alf | aff"},
        {"finetune_epochs", "finetune", &C::finetune_epochs, "finetuning epochs"},
        {"finetune_batch_size", "finetune", &C::finetune_batch_size, "finetuning batch size"},
        {"finetune_lr", "finetune", &C::finetune_lr, "finetuning initial lr"},
        {"finetune_milestones", "finetune", &C::finetune_milestones, "epochs where lr is multiplied by gamma"},
        {"finetune_gamma", "finetune", &C::finetune_gamma, "lr decay factor"},
        {"finetune_momentum", "finetune", &C::finetune_momentum, "SGD momentum"},
        {"finetune_weight_decay", "finetune", &C::finetune_weight_decay, "SGD weight decay"},
        {"finetune_attack_steps", "finetune", &C::finetune_attack_steps, "PGD steps of ALF / AFF"},
        {"trades_beta", "finetune", &C::trades_beta, "TRADES KL weight (AFF)"},
        {"freeze_bn_stats", "finetune", &C::freeze_bn_stats, "keep running statistics fixed in SLF / ALF"},
        {"cache_features", "finetune", &C::cache_features, "encode the SLF training set once"},
        {"finetune_augment", "finetune", &C::finetune_augment, "augment finetuning inputs"},
        {"val_fraction", "finetune", &C::val_fraction, "validation share for best-epoch selection"},
        {"select_attack_steps", "finetune", &C::select_attack_steps, "PGD steps of validation RA"},
        {"resize_inputs", "finetune", &C::resize_inputs, "resize datasets to the encoder resolution"},
        {"eval_epsilons_255", "eval", &C::eval_epsilons_255, "sweep radii in 1/255 units"},
        {"eval_steps", "eval", &C::eval_steps, "sweep PGD step counts"},
        {"eval_step_size_255", "eval", &C::eval_step_size_255, "evaluation PGD step in 1/255 units"},
        {"eval_attack_init", "eval", &C::eval_attack_init, "zero | uniform_random"},
        {"eval_batch_size", "eval", &C::eval_batch_size, "evaluation batch size"},
        {"ra_epsilon_255", "eval", &C::ra_epsilon_255, "radius of the headline RA"},
        {"ra_steps", "eval", &C::ra_steps, "PGD steps of the headline RA"},
        {"ablate_lambdas", "ablate", &C::ablate_lambdas, "lambda values of `ablate lambda`"},
        {"ablate_recipes", "ablate", &C::ablate_recipes, "recipes of `ablate views` (empty = all)"},
        {"ablate_finetune_modes", "ablate", &C::ablate_finetune_modes, "modes of `ablate finetune_modes`"},
    };
    return keys;
}

[[nodiscard]] inline const ConfigKey& find_config_key(const std::string& name)
{
    for (const auto& k : config_keys()) {
        if (name == k.name) {
            return k;
        }
    }
    throw ConfigError("unknown config key '" + name + "'");
}

inline void set_config_value(ExperimentConfig& c, const std::string& name, const YAML::Node& value)
{
    const ConfigKey& key = find_config_key(name);
    try {
        std::visit(
            [&](auto member) {
                using T = std::remove_reference_t<decltype(c.*member)>;
                if (value.IsNull() && (std::is_same_v<T, std::string> || !std::is_arithmetic_v<T>)) {
                    c.*member = T{};
                } else {
                    c.*member = value.as<T>();
                }
            },
            key.member);
    } catch (const YAML::Exception& e) {
        throw ConfigError("bad value for config key '" + name + "': " + e.what());
    }
}

// `key=value` with a YAML-syntax value, e.g. "k_list=[2,10]".
inline void apply_override(ExperimentConfig& c, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like key=value, got '" + assignment + "'");
    }
    YAML::Node v;
    try {
        v = YAML::Load(assignment.substr(eq + 1));
    } catch (const YAML::Exception& e) {
        throw ConfigError("cannot parse override '" + assignment + "': " + e.what());
    }
    set_config_value(c, assignment.substr(0, eq), v);
}

[[nodiscard]] inline ExperimentConfig config_from_yaml(const YAML::Node& root)
{
    ExperimentConfig c;
    if (!root || root.IsNull()) {
        return c;
    }
    if (!root.IsMap()) {
        throw ConfigError("config file must be a mapping of flat keys");
    }
    for (const auto& kv : root) {
        const auto name = kv.first.as<std::string>();
        if (kv.second.IsMap()) {
            throw ConfigError("config key '" + name + "' is nested; only flat keys are supported");
        }
        set_config_value(c, name, kv.second);
    }
    return c;
}

[[nodiscard]] inline ExperimentConfig load_config(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw IoError("config file not found: " + path.string());
    }
    try {
        return config_from_yaml(YAML::LoadFile(path.string()));
    } catch (const YAML::Exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
}

// Fully materialized config, optionally restricted to some sections.
[[nodiscard]] inline nlohmann::json to_json(const ExperimentConfig& c, const std::vector<std::string>& sections = {})
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : config_keys()) {
        if (!sections.empty() && std::find(sections.begin(), sections.end(), k.section) == sections.end()) {
            continue;
        }
        std::visit([&](auto member) { j[k.name] = c.*member; }, k.member);
    }
    return j;
}

[[nodiscard]] inline std::string to_yaml(const ExperimentConfig& c)
{
    std::ostringstream o;
    const char* section = "";
    for (const auto& k : config_keys()) {
        if (std::string(section) != k.section) {
            section = k.section;
            o << "\n# " << section << "\n";
        }
        o << k.name << ": " << to_json(c, {k.section})[k.name].dump() << "\n";
    }
    return o.str();
}

[[nodiscard]] inline std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : s) {
        h = (h ^ ch) * 1099511628211ULL;
    }
    return h;
}

[[nodiscard]] inline std::string hex16(std::uint64_t v)
{
    std::ostringstream o;
    o << std::hex << std::setw(16) << std::setfill('0') << v;
    return o.str();
}

[[nodiscard]] inline std::string config_hash(const ExperimentConfig& c, const std::vector<std::string>& sections = {})
{
    return hex16(fnv1a(to_json(c, sections).dump()));
}

} // namespace advcl

#endif // ADVCL_CONFIG_HPP
