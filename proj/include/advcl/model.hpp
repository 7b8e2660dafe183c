#ifndef ADVCL_MODEL_HPP
#define ADVCL_MODEL_HPP

#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "errors.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace advcl {

// Which normalization branch a forward pass reads (and, in training, updates).
enum class BNRoute : std::uint8_t { normal = 0, adv_cl = 1, adv_ce = 2 };

inline constexpr std::array<BNRoute, 3> kAllRoutes{BNRoute::normal, BNRoute::adv_cl, BNRoute::adv_ce};

[[nodiscard]] inline const char* to_string(BNRoute r)
{
    switch (r) {
    case BNRoute::normal: return "normal";
    case BNRoute::adv_cl: return "adv_cl";
    default: return "adv_ce";
    }
}

struct ForwardOptions {
    BNRoute route = BNRoute::normal;
    bool batch_stats = false;   // train-mode normalization
    bool update_stats = false;  // write running statistics of the routed branch
    bool param_grads = false;   // build gradient paths to trainable parameters

    [[nodiscard]] static ForwardOptions eval(BNRoute r = BNRoute::normal) { return {r, false, false, false}; }
    [[nodiscard]] static ForwardOptions train(BNRoute r = BNRoute::normal) { return {r, true, true, true}; }
    // Batch statistics without side effects, e.g. for gradient checks.
    [[nodiscard]] static ForwardOptions train_frozen_stats(BNRoute r = BNRoute::normal) { return {r, true, false, true}; }
};

enum class Architecture { tiny_cnn, resnet18 };

[[nodiscard]] inline const char* to_string(Architecture a) { return a == Architecture::tiny_cnn ? "tiny_cnn" : "resnet18"; }

[[nodiscard]] inline Architecture parse_architecture(const std::string& s)
{
    if (s == "tiny_cnn") return Architecture::tiny_cnn;
    if (s == "resnet18") return Architecture::resnet18;
    throw ConfigError("unknown architecture '" + s + "'");
}

struct EncoderConfig {
    Architecture architecture = Architecture::tiny_cnn;
    std::size_t feature_dim = 128;
    std::size_t projection_dim = 64;
    std::size_t input_channels = 1;
    std::size_t input_size = 16;
    std::size_t width = 32;          // channels of the first stage
    std::size_t bn_branches = 3;     // 3 = TriBN, 1 = single BN twin
    std::uint64_t init_seed = 0;

    void validate() const
    {
        if (feature_dim == 0 || projection_dim == 0 || input_channels == 0 || input_size < 4 || width == 0) {
            throw ConfigError("encoder dimensions must be >= 1 (input_size >= 4)");
        }
        if (bn_branches != 1 && bn_branches != 3) {
            throw ConfigError("bn_branches must be 1 or 3");
        }
        if (architecture == Architecture::resnet18 && feature_dim != 8 * width) {
            throw ConfigError("resnet18 feature_dim must equal 8 * width");
        }
    }
};

struct Parameter {
    std::string name;
    std::shared_ptr<ag::Node> node;
    bool frozen = false;

    [[nodiscard]] Tensor& value() { return node->value; }
    [[nodiscard]] const Tensor& value() const { return node->value; }
    [[nodiscard]] Tensor& grad() { return node->grad_buffer(); }
    [[nodiscard]] bool has_grad() const { return !node->grad.empty(); }
    void zero_grad() { node->grad = Tensor(); }
};

struct Buffer {
    std::string name;
    Tensor* tensor;
};

// Owns parameters with stable addresses plus a registry of named buffers.
class ParameterStore {
public:
    Parameter& add(std::string name, Tensor init)
    {
        auto node = std::make_shared<ag::Node>();
        node->value = std::move(init);
        node->requires_grad = true;
        params_.push_back(Parameter{std::move(name), std::move(node), false});
        return params_.back();
    }

    [[nodiscard]] std::vector<Parameter*> all()
    {
        std::vector<Parameter*> out;
        for (auto& p : params_) {
            out.push_back(&p);
        }
        return out;
    }

    [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }

private:
    std::deque<Parameter> params_;
};

// A parameter as seen by one forward pass: a gradient path when the pass wants
// parameter gradients and the parameter is trainable, a constant otherwise.
[[nodiscard]] inline ag::Var use(const Parameter& p, const ForwardOptions& o)
{
    if (o.param_grads && !p.frozen) {
        return ag::Var(p.node);
    }
    return ag::Var::constant(p.node->value);
}

namespace detail {

[[nodiscard]] inline Tensor kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng)
{
    return normal_tensor(std::move(shape), 0.0, std::sqrt(2.0 / static_cast<Real>(fan_in)), rng);
}

[[nodiscard]] inline Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng)
{
    const Real bound = 1.0 / std::sqrt(static_cast<Real>(fan_in));
    return uniform_tensor(std::move(shape), -bound, bound, rng);
}

} // namespace detail

class Conv2d {
public:
    Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
           ag::Conv2dSpec spec, Rng& rng)
        : weight_(&store.add(name + ".weight", detail::kaiming_normal(Shape{out, in, k, k}, in * k * k, rng))),
          spec_(spec)
    {
    }

    [[nodiscard]] ag::Var operator()(const ag::Var& x, const ForwardOptions& o) const
    {
        return ag::conv2d(x, use(*weight_, o), ag::Var(), spec_);
    }

    [[nodiscard]] Parameter& weight() const { return *weight_; }

private:
    Parameter* weight_;
    ag::Conv2dSpec spec_;
};

class Linear {
public:
    Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : weight_(&store.add(name + ".weight", detail::uniform_fan_in(Shape{out, in}, in, rng))),
          bias_(&store.add(name + ".bias", detail::uniform_fan_in(Shape{out}, in, rng)))
    {
    }

    [[nodiscard]] ag::Var operator()(const ag::Var& x, const ForwardOptions& o) const
    {
        return ag::linear(x, use(*weight_, o), use(*bias_, o));
    }

    [[nodiscard]] Parameter& weight() const { return *weight_; }
    [[nodiscard]] Parameter& bias() const { return *bias_; }
    [[nodiscard]] std::size_t out_features() const { return weight_->value().dim(0); }

    void reset(Rng& rng)
    {
        const std::size_t in = weight_->value().dim(1);
        weight_->value() = detail::uniform_fan_in(weight_->value().shape(), in, rng);
        bias_->value() = detail::uniform_fan_in(bias_->value().shape(), in, rng);
    }

private:
    Parameter* weight_;
    Parameter* bias_;
};

// Batch normalization with independent affine parameters and running
// statistics per branch. With a single branch every route maps to it.
class RoutedBatchNorm {
public:
    RoutedBatchNorm(ParameterStore& store, const std::string& name, std::size_t channels, std::size_t branches)
    {
        for (std::size_t b = 0; b < branches; ++b) {
            const std::string tag = name + ".bn" + std::to_string(b);
            Branch br;
            br.gamma = &store.add(tag + ".weight", Tensor(Shape{channels}, 1.0));
            br.beta = &store.add(tag + ".bias", Tensor(Shape{channels}, 0.0));
            br.stats = std::make_unique<ag::RunningStats>(
                ag::RunningStats{Tensor(Shape{channels}, 0.0), Tensor(Shape{channels}, 1.0)});
            br.name = tag;
            branches_.push_back(std::move(br));
        }
    }

    [[nodiscard]] ag::Var operator()(const ag::Var& x, const ForwardOptions& o) const
    {
        const Branch& br = branch(o.route);
        ag::BatchNormMode mode;
        mode.use_batch_stats = o.batch_stats;
        mode.update_running = o.batch_stats && o.update_stats;
        return ag::batch_norm(x, use(*br.gamma, o), use(*br.beta, o), *br.stats, mode);
    }

    [[nodiscard]] std::size_t branch_index(BNRoute r) const
    {
        return std::min<std::size_t>(static_cast<std::size_t>(r), branches_.size() - 1);
    }

    [[nodiscard]] ag::RunningStats& stats(BNRoute r) const { return *branch(r).stats; }
    [[nodiscard]] Parameter& gamma(BNRoute r) const { return *branch(r).gamma; }
    [[nodiscard]] Parameter& beta(BNRoute r) const { return *branch(r).beta; }
    [[nodiscard]] std::size_t num_branches() const noexcept { return branches_.size(); }

    void collect_buffers(std::vector<Buffer>& out) const
    {
        for (const auto& br : branches_) {
            out.push_back({br.name + ".running_mean", &br.stats->mean});
            out.push_back({br.name + ".running_var", &br.stats->var});
        }
    }

    // Copies statistics and affine parameters of one branch into another.
    void copy_branch(BNRoute from, BNRoute to) const
    {
        const Branch& a = branch(from);
        const Branch& b = branch(to);
        if (&a == &b) {
            return;
        }
        b.stats->mean = a.stats->mean;
        b.stats->var = a.stats->var;
        b.gamma->value() = a.gamma->value();
        b.beta->value() = a.beta->value();
    }

private:
    struct Branch {
        std::string name;
        Parameter* gamma = nullptr;
        Parameter* beta = nullptr;
        std::unique_ptr<ag::RunningStats> stats;
    };

    [[nodiscard]] const Branch& branch(BNRoute r) const { return branches_[branch_index(r)]; }

    std::vector<Branch> branches_;
};

namespace detail {

struct ConvBlock {
    Conv2d conv;
    RoutedBatchNorm bn;
};

struct BasicBlock {
    Conv2d conv1;
    RoutedBatchNorm bn1;
    Conv2d conv2;
    RoutedBatchNorm bn2;
    std::optional<Conv2d> short_conv;
    std::optional<RoutedBatchNorm> short_bn;
};

} // namespace detail

// Encoder f, projection head g, pseudo-label heads (one per cluster count) and
// an optional downstream linear classifier.
class RobustModel {
public:
    explicit RobustModel(EncoderConfig cfg) : cfg_(cfg)
    {
        cfg_.validate();
        Rng rng = make_rng(cfg_.init_seed, {0xE7C0u});
        const std::size_t nb = cfg_.bn_branches;
        if (cfg_.architecture == Architecture::tiny_cnn) {
            const std::array<std::size_t, 3> widths{cfg_.width, 2 * cfg_.width, cfg_.feature_dim};
            std::size_t in = cfg_.input_channels;
            for (std::size_t i = 0; i < widths.size(); ++i) {
                const std::string name = "encoder.block" + std::to_string(i);
                blocks_.push_back(detail::ConvBlock{Conv2d(store_, name + ".conv", in, widths[i], 3, {1, 1}, rng),
                                                    RoutedBatchNorm(store_, name, widths[i], nb)});
                in = widths[i];
            }
        } else {
            const std::size_t w = cfg_.width;
            blocks_.push_back(detail::ConvBlock{Conv2d(store_, "encoder.stem.conv", cfg_.input_channels, w, 3, {1, 1}, rng),
                                                RoutedBatchNorm(store_, "encoder.stem", w, nb)});
            std::size_t in = w;
            const std::array<std::size_t, 4> stage_width{w, 2 * w, 4 * w, 8 * w};
            for (std::size_t s = 0; s < 4; ++s) {
                for (std::size_t b = 0; b < 2; ++b) {
                    const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
                    const std::string name = "encoder.layer" + std::to_string(s + 1) + "." + std::to_string(b);
                    const std::size_t out = stage_width[s];
                    detail::BasicBlock blk{Conv2d(store_, name + ".conv1", in, out, 3, {stride, 1}, rng),
                                           RoutedBatchNorm(store_, name + ".n1", out, nb),
                                           Conv2d(store_, name + ".conv2", out, out, 3, {1, 1}, rng),
                                           RoutedBatchNorm(store_, name + ".n2", out, nb),
                                           std::nullopt,
                                           std::nullopt};
                    if (stride != 1 || in != out) {
                        blk.short_conv.emplace(store_, name + ".shortcut", in, out, 1, ag::Conv2dSpec{stride, 0}, rng);
                        blk.short_bn.emplace(store_, name + ".shortcut", out, nb);
                    }
                    res_blocks_.push_back(std::move(blk));
                    in = out;
                }
            }
        }
        encoder_param_count_ = store_.size();
        proj1_.emplace(store_, "projection.fc1", cfg_.feature_dim, cfg_.feature_dim, rng);
        proj2_.emplace(store_, "projection.fc2", cfg_.feature_dim, cfg_.projection_dim, rng);
    }

    RobustModel(const RobustModel&) = delete;
    RobustModel& operator=(const RobustModel&) = delete;
    RobustModel(RobustModel&&) = delete;
    RobustModel& operator=(RobustModel&&) = delete;

    [[nodiscard]] const EncoderConfig& config() const noexcept { return cfg_; }

    // ------------------------------------------------------------ heads

    void attach_pseudo_heads(const std::vector<std::size_t>& k_list, std::uint64_t seed)
    {
        if (!pseudo_heads_.empty()) {
            throw StateError("pseudo heads already attached");
        }
        Rng rng = make_rng(seed, {0x9E4Du});
        for (std::size_t i = 0; i < k_list.size(); ++i) {
            if (k_list[i] == 0) {
                throw ConfigError("pseudo head width must be >= 1");
            }
            pseudo_heads_.emplace_back(store_, "pseudo_head." + std::to_string(i), cfg_.feature_dim, k_list[i], rng);
        }
    }

    void attach_classifier(std::size_t num_classes, std::uint64_t seed)
    {
        if (classifier_) {
            throw StateError("classifier already attached");
        }
        if (num_classes == 0) {
            throw ConfigError("classifier needs at least one class");
        }
        Rng rng = make_rng(seed, {0xC1A5u});
        classifier_.emplace(store_, "classifier", cfg_.feature_dim, num_classes, rng);
    }

    // Fresh downstream head: attaches one, or re-initializes an existing head of
    // the same width exactly as attach_classifier would have.
    void reset_classifier(std::size_t num_classes, std::uint64_t seed)
    {
        if (!classifier_) {
            attach_classifier(num_classes, seed);
            return;
        }
        if (classifier_->out_features() != num_classes) {
            throw ConfigError("checkpoint classifier has " + std::to_string(classifier_->out_features()) +
                              " classes, dataset has " + std::to_string(num_classes));
        }
        Rng rng = make_rng(seed, {0xC1A5u});
        classifier_->reset(rng);
    }

    [[nodiscard]] bool has_classifier() const noexcept { return classifier_.has_value(); }
    [[nodiscard]] std::size_t num_classes() const { return classifier_ ? classifier_->out_features() : 0; }
    [[nodiscard]] std::size_t num_pseudo_heads() const noexcept { return pseudo_heads_.size(); }
    [[nodiscard]] std::vector<std::size_t> pseudo_head_widths() const
    {
        std::vector<std::size_t> out;
        for (const auto& h : pseudo_heads_) {
            out.push_back(h.out_features());
        }
        return out;
    }

    // ------------------------------------------------------------ forward

    [[nodiscard]] ag::Var forward_features(const ag::Var& x, const ForwardOptions& o) const
    {
        check_input(x.value());
        if (cfg_.architecture == Architecture::tiny_cnn) {
            ag::Var h = x;
            for (std::size_t i = 0; i < blocks_.size(); ++i) {
                h = ag::relu(blocks_[i].bn(blocks_[i].conv(h, o), o));
                if (i + 1 < blocks_.size()) {
                    h = ag::max_pool2d(h, 2);
                }
            }
            return ag::global_avg_pool(h);
        }
        ag::Var h = ag::relu(blocks_[0].bn(blocks_[0].conv(x, o), o));
        for (const auto& blk : res_blocks_) {
            ag::Var out = ag::relu(blk.bn1(blk.conv1(h, o), o));
            out = blk.bn2(blk.conv2(out, o), o);
            ag::Var sc = blk.short_conv ? (*blk.short_bn)((*blk.short_conv)(h, o), o) : h;
            h = ag::relu(out + sc);
        }
        return ag::global_avg_pool(h);
    }

    [[nodiscard]] ag::Var project(const ag::Var& features, const ForwardOptions& o) const
    {
        return (*proj2_)(ag::relu((*proj1_)(features, o)), o);
    }

    [[nodiscard]] ag::Var forward_projection(const ag::Var& x, const ForwardOptions& o) const
    {
        return project(forward_features(x, o), o);
    }

    [[nodiscard]] ag::Var pseudo_logits_from_features(const ag::Var& features, const ForwardOptions& o,
                                                      std::size_t head) const
    {
        if (head >= pseudo_heads_.size()) {
            throw ValidationError("pseudo head index " + std::to_string(head) + " out of range (" +
                                  std::to_string(pseudo_heads_.size()) + " heads)");
        }
        return pseudo_heads_[head](features, o);
    }

    [[nodiscard]] ag::Var forward_pseudo_logits(const ag::Var& x, const ForwardOptions& o, std::size_t head) const
    {
        if (head >= pseudo_heads_.size()) {
            throw ValidationError("pseudo head index " + std::to_string(head) + " out of range (" +
                                  std::to_string(pseudo_heads_.size()) + " heads)");
        }
        return pseudo_heads_[head](forward_features(x, o), o);
    }

    [[nodiscard]] ag::Var classify_features(const ag::Var& features, const ForwardOptions& o) const
    {
        if (!classifier_) {
            throw StateError("no downstream classifier attached");
        }
        return (*classifier_)(features, o);
    }

    [[nodiscard]] ag::Var forward_classifier(const ag::Var& x, const ForwardOptions& o = ForwardOptions::eval()) const
    {
        if (!classifier_) {
            throw StateError("no downstream classifier attached");
        }
        return (*classifier_)(forward_features(x, o), o);
    }

    // ------------------------------------------------------------ parameters

    [[nodiscard]] std::vector<Parameter*> parameters() { return store_.all(); }

    [[nodiscard]] std::vector<Parameter*> encoder_parameters()
    {
        auto all = store_.all();
        return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(encoder_param_count_)};
    }

    [[nodiscard]] std::vector<Parameter*> classifier_parameters()
    {
        if (!classifier_) {
            return {};
        }
        return {&classifier_->weight(), &classifier_->bias()};
    }

    [[nodiscard]] std::vector<Parameter*> pseudo_head_parameters()
    {
        std::vector<Parameter*> out;
        for (auto& h : pseudo_heads_) {
            out.push_back(&h.weight());
            out.push_back(&h.bias());
        }
        return out;
    }

    [[nodiscard]] std::vector<Buffer> buffers() const
    {
        std::vector<Buffer> out;
        for (const auto& b : blocks_) {
            b.bn.collect_buffers(out);
        }
        for (const auto& blk : res_blocks_) {
            blk.bn1.collect_buffers(out);
            blk.bn2.collect_buffers(out);
            if (blk.short_bn) {
                blk.short_bn->collect_buffers(out);
            }
        }
        return out;
    }

    [[nodiscard]] std::vector<const RoutedBatchNorm*> norm_layers() const
    {
        std::vector<const RoutedBatchNorm*> out;
        for (const auto& b : blocks_) {
            out.push_back(&b.bn);
        }
        for (const auto& blk : res_blocks_) {
            out.push_back(&blk.bn1);
            out.push_back(&blk.bn2);
            if (blk.short_bn) {
                out.push_back(&*blk.short_bn);
            }
        }
        return out;
    }

    void set_encoder_frozen(bool frozen)
    {
        for (auto* p : encoder_parameters()) {
            p->frozen = frozen;
        }
    }

    void zero_grad()
    {
        for (auto* p : parameters()) {
            p->zero_grad();
        }
    }

    void copy_bn_branch(BNRoute from, BNRoute to) const
    {
        for (const auto* bn : norm_layers()) {
            bn->copy_branch(from, to);
        }
    }

    [[nodiscard]] std::size_t parameter_count()
    {
        std::size_t n = 0;
        for (auto* p : parameters()) {
            n += p->value().numel();
        }
        return n;
    }

    // FNV-1a over parameter and buffer bytes; equal iff bit-identical (modulo collisions).
    [[nodiscard]] std::uint64_t fingerprint()
    {
        std::uint64_t h = 14695981039346656037ULL;
        auto mix = [&h](const Tensor& t) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
            for (std::size_t i = 0; i < t.numel() * sizeof(Real); ++i) {
                h = (h ^ bytes[i]) * 1099511628211ULL;
            }
        };
        for (auto* p : parameters()) {
            mix(p->value());
        }
        for (const auto& b : buffers()) {
            mix(*b.tensor);
        }
        return h;
    }

    [[nodiscard]] static std::uint64_t hash_parameters(const std::vector<Parameter*>& params)
    {
        std::uint64_t h = 14695981039346656037ULL;
        for (const auto* p : params) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(p->value().data());
            for (std::size_t i = 0; i < p->value().numel() * sizeof(Real); ++i) {
                h = (h ^ bytes[i]) * 1099511628211ULL;
            }
        }
        return h;
    }

    void check_input(const Tensor& x) const
    {
        const auto& s = x.shape();
        if (s.size() != 4 || s[0] == 0 || s[1] != cfg_.input_channels || s[2] != cfg_.input_size ||
            s[3] != cfg_.input_size) {
            throw ValidationError("model input must be [B, " + std::to_string(cfg_.input_channels) + ", " +
                                  std::to_string(cfg_.input_size) + ", " + std::to_string(cfg_.input_size) +
                                  "], got " + shape_str(s));
        }
    }

private:
    EncoderConfig cfg_;
    ParameterStore store_;
    std::vector<detail::ConvBlock> blocks_;
    std::vector<detail::BasicBlock> res_blocks_;
    std::size_t encoder_param_count_ = 0;
    std::optional<Linear> proj1_, proj2_;
    std::vector<Linear> pseudo_heads_;
    std::optional<Linear> classifier_;
};

// ------------------------------------------------------------------ model concepts

// Anything that maps an input batch to class logits.
template <class M>
concept ClassifierModel = requires(const M& m, const ag::Var& x, const ForwardOptions& o) {
    { m.forward_classifier(x, o) } -> std::same_as<ag::Var>;
};

template <class M>
concept ProjectionModel = requires(const M& m, const ag::Var& x, const ForwardOptions& o) {
    { m.forward_projection(x, o) } -> std::same_as<ag::Var>;
};

template <class M>
concept PseudoLabelModel = requires(const M& m, const ag::Var& x, const ForwardOptions& o, std::size_t i) {
    { m.forward_features(x, o) } -> std::same_as<ag::Var>;
    { m.pseudo_logits_from_features(x, o, i) } -> std::same_as<ag::Var>;
    { m.num_pseudo_heads() } -> std::convertible_to<std::size_t>;
};

} // namespace advcl

#endif // ADVCL_MODEL_HPP
