#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace advcl;
using namespace advcl::testing;

namespace {

std::vector<Tensor> snapshot_stats(const RobustModel& m, BNRoute r)
{
    std::vector<Tensor> out;
    for (const auto* bn : m.norm_layers()) {
        out.push_back(bn->stats(r).mean);
        out.push_back(bn->stats(r).var);
    }
    return out;
}

bool same(const std::vector<Tensor>& a, const std::vector<Tensor>& b)
{
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (max_abs_diff(a[i], b[i]) != 0) {
            return false;
        }
    }
    return true;
}

} // namespace

TEST(Model, TrainingForwardTouchesOnlyTheRoutedBranch)
{
    RobustModel m(tiny_encoder());
    for (int i = 0; i < 100; ++i) {
        const BNRoute route = kAllRoutes[static_cast<std::size_t>(i) % 3];
        std::array<std::vector<Tensor>, 3> before;
        for (std::size_t r = 0; r < 3; ++r) {
            before[r] = snapshot_stats(m, kAllRoutes[r]);
        }
        (void)m.forward_projection(ag::Var::constant(random_tensor({4, 1, 8, 8}, 50 + i)), ForwardOptions::train(route));
        for (std::size_t r = 0; r < 3; ++r) {
            const bool unchanged = same(before[r], snapshot_stats(m, kAllRoutes[r]));
            EXPECT_EQ(unchanged, kAllRoutes[r] != route) << "iteration " << i << " branch " << r;
        }
    }
}

TEST(Model, EvalForwardHasNoSideEffects)
{
    RobustModel m(tiny_encoder());
    const auto fp = m.fingerprint();
    (void)m.forward_projection(ag::Var::constant(random_tensor({2, 1, 8, 8}, 3)), ForwardOptions::eval(BNRoute::adv_cl));
    (void)m.forward_projection(ag::Var::constant(random_tensor({2, 1, 8, 8}, 3)),
                               ForwardOptions::train_frozen_stats(BNRoute::adv_ce));
    EXPECT_EQ(m.fingerprint(), fp);
}

TEST(Model, CopyBnBranchMakesRoutesAgree)
{
    RobustModel m(tiny_encoder());
    for (int i = 0; i < 3; ++i) {
        (void)m.forward_projection(ag::Var::constant(random_tensor({4, 1, 8, 8}, 70 + i)), ForwardOptions::train());
    }
    const Tensor x = random_tensor({3, 1, 8, 8}, 80);
    const Tensor a = m.forward_projection(ag::Var::constant(x), ForwardOptions::eval(BNRoute::normal)).value();
    EXPECT_GT(max_abs_diff(a, m.forward_projection(ag::Var::constant(x), ForwardOptions::eval(BNRoute::adv_cl)).value()), 0.0);
    m.copy_bn_branch(BNRoute::normal, BNRoute::adv_cl);
    EXPECT_EQ(max_abs_diff(a, m.forward_projection(ag::Var::constant(x), ForwardOptions::eval(BNRoute::adv_cl)).value()), 0.0);
}

TEST(Model, SingleBranchSharesAllRoutes)
{
    EncoderConfig c = tiny_encoder();
    c.bn_branches = 1;
    RobustModel m(c);
    (void)m.forward_projection(ag::Var::constant(random_tensor({4, 1, 8, 8}, 1)), ForwardOptions::train(BNRoute::adv_ce));
    const Tensor x = random_tensor({2, 1, 8, 8}, 2);
    EXPECT_EQ(max_abs_diff(m.forward_projection(ag::Var::constant(x), ForwardOptions::eval(BNRoute::normal)).value(),
                           m.forward_projection(ag::Var::constant(x), ForwardOptions::eval(BNRoute::adv_ce)).value()),
              0.0);
}

TEST(Model, OutputShapesAndHeadWidths)
{
    RobustModel m(tiny_encoder());
    m.attach_pseudo_heads({2, 5, 7}, 3);
    m.attach_classifier(4, 4);
    const ag::Var x = ag::Var::constant(random_tensor({3, 1, 8, 8}, 5));
    EXPECT_EQ(m.forward_features(x, ForwardOptions::eval()).shape(), (Shape{3, 12}));
    EXPECT_EQ(m.forward_projection(x, ForwardOptions::eval()).shape(), (Shape{3, 6}));
    EXPECT_EQ(m.pseudo_head_widths(), (std::vector<std::size_t>{2, 5, 7}));
    for (std::size_t h = 0; h < 3; ++h) {
        EXPECT_EQ(m.forward_pseudo_logits(x, ForwardOptions::eval(), h).shape(), (Shape{3, m.pseudo_head_widths()[h]}));
    }
    EXPECT_EQ(m.forward_classifier(x).shape(), (Shape{3, 4}));
    EXPECT_THROW((void)m.forward_pseudo_logits(x, ForwardOptions::eval(), 3), ValidationError);
    EXPECT_THROW(m.attach_classifier(4, 1), StateError);
    EXPECT_THROW((void)m.forward_features(ag::Var::constant(random_tensor({1, 3, 8, 8}, 1)), ForwardOptions::eval()),
                 ValidationError);
    RobustModel bare(tiny_encoder());
    EXPECT_THROW((void)bare.forward_classifier(x), StateError);
    EXPECT_THROW(bare.attach_pseudo_heads({0}, 1), ConfigError);
}

TEST(Model, ParameterCountFormula)
{
    const EncoderConfig c = tiny_encoder(3, 8);
    RobustModel m(c);
    m.attach_pseudo_heads({2, 10}, 1);
    m.attach_classifier(10, 1);
    const std::size_t w = c.width, f = c.feature_dim, p = c.projection_dim, C = c.input_channels;
    const std::size_t conv = 9 * (C * w + w * 2 * w + 2 * w * f);
    const std::size_t bn = 2 * 3 * (w + 2 * w + f);
    const std::size_t proj = f * f + f + f * p + p;
    const std::size_t heads = (f + 1) * 2 + (f + 1) * 10;
    const std::size_t cls = (f + 1) * 10;
    EXPECT_EQ(m.parameter_count(), conv + bn + proj + heads + cls);
}

TEST(Model, ResNetBuildsAndRuns)
{
    EncoderConfig c;
    c.architecture = Architecture::resnet18;
    c.width = 2;
    c.feature_dim = 16;
    c.projection_dim = 4;
    c.input_channels = 3;
    c.input_size = 8;
    RobustModel m(c);
    EXPECT_EQ(m.forward_projection(ag::Var::constant(random_tensor({2, 3, 8, 8}, 1)), ForwardOptions::train()).shape(),
              (Shape{2, 4}));
    c.feature_dim = 15;
    EXPECT_THROW(RobustModel bad(c), ConfigError);
}

TEST(Model, CheckpointRoundTripIsBitExact)
{
    RobustModel m(tiny_encoder());
    m.attach_pseudo_heads({3, 4}, 2);
    m.attach_classifier(2, 2);
    (void)m.forward_projection(ag::Var::constant(random_tensor({4, 1, 8, 8}, 9)), ForwardOptions::train(BNRoute::adv_cl));
    const auto path = std::filesystem::temp_directory_path() / "advcl_model_roundtrip.ckpt";
    save_checkpoint(path, m, {{"epoch", 3}}, {{"momentum.0", Tensor(Shape{2}, 1.5)}}, "abc");
    Checkpoint ck = load_checkpoint(path);
    EXPECT_EQ(ck.model->fingerprint(), m.fingerprint());
    EXPECT_EQ(ck.meta.at("epoch"), 3);
    EXPECT_EQ(ck.config_hash, "abc");
    EXPECT_EQ(ck.extra.at("momentum.0")[1], 1.5);
    EXPECT_EQ(ck.model->pseudo_head_widths(), m.pseudo_head_widths());
    const Tensor x = random_tensor({2, 1, 8, 8}, 10);
    EXPECT_EQ(max_abs_diff(ck.model->forward_classifier(ag::Var::constant(x)).value(),
                           m.forward_classifier(ag::Var::constant(x)).value()),
              0.0);
    std::filesystem::remove(path);
    EXPECT_THROW((void)load_checkpoint(path), IoError);
}

TEST(Model, BufferNamesFollowBranchLayout)
{
    RobustModel m(tiny_encoder());
    std::vector<std::string> names;
    for (const auto& b : m.buffers()) {
        names.push_back(b.name);
    }
    EXPECT_NE(std::find(names.begin(), names.end(), "encoder.block0.bn2.running_var"), names.end());
    EXPECT_EQ(names.size(), 3u * 3u * 2u);
}

TEST(Model, ProjectionGradientMatchesFiniteDifferences)
{
    RobustModel m(tiny_encoder());
    const Tensor x = random_tensor({3, 1, 8, 8}, 11);
    const Tensor probe = random_tensor({3, 6}, 12, -1, 1);
    m.zero_grad();
    ag::backward(ag::weighted_sum(m.forward_projection(ag::Var::constant(x), ForwardOptions::train_frozen_stats()), probe));
    int checked = 0;
    for (auto* p : m.parameters()) {
        if (!p->has_grad()) {
            continue;
        }
        const Tensor analytic = p->grad();
        std::vector<std::size_t> coords{0, p->value().numel() / 2};
        const auto num = finite_diff(
            [&] {
                return ag::weighted_sum(m.forward_projection(ag::Var::constant(x), ForwardOptions::train_frozen_stats()),
                                        probe)
                    .item();
            },
            p->value(), coords);
        for (std::size_t k = 0; k < coords.size(); ++k) {
            EXPECT_NEAR(analytic[coords[k]], num[k], 1e-5 + 1e-4 * std::abs(num[k])) << p->name;
        }
        ++checked;
    }
    EXPECT_GE(checked, 10);
}

TEST(Model, ClassifierIsLinearOnFeatures)
{
    RobustModel m(tiny_encoder());
    m.attach_classifier(3, 7);
    const ag::Var x = ag::Var::constant(random_tensor({2, 1, 8, 8}, 13));
    const Tensor f = m.forward_features(x, ForwardOptions::eval()).value();
    const Tensor logits = m.forward_classifier(x).value();
    const Tensor& W = m.classifier_parameters()[0]->value();
    const Tensor& b = m.classifier_parameters()[1]->value();
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t k = 0; k < 3; ++k) {
            Real s = b[k];
            for (std::size_t j = 0; j < f.dim(1); ++j) {
                s += W.at(k, j) * f.at(i, j);
            }
            EXPECT_NEAR(logits.at(i, k), s, 1e-12);
        }
    }
}

TEST(Model, FrozenEncoderReceivesNoGradient)
{
    RobustModel m(tiny_encoder());
    m.attach_classifier(2, 1);
    m.set_encoder_frozen(true);
    const std::vector<int> y{0, 1};
    ag::backward(cross_entropy(m.forward_classifier(ag::Var::constant(random_tensor({2, 1, 8, 8}, 14)),
                                                    ForwardOptions::train_frozen_stats()),
                               y));
    for (auto* p : m.encoder_parameters()) {
        EXPECT_FALSE(p->has_grad()) << p->name;
    }
    for (auto* p : m.classifier_parameters()) {
        EXPECT_TRUE(p->has_grad());
    }
}

TEST(Model, EvalOutputsAreLipschitzInTheInput)
{
    // Small input perturbations move eval-mode outputs by a bounded amount.
    RobustModel m(tiny_encoder());
    const Tensor x = random_tensor({1, 1, 8, 8}, 15);
    const Tensor y0 = m.forward_projection(ag::Var::constant(x), ForwardOptions::eval()).value();
    for (Real eps : {1e-3, 1e-4, 1e-5}) {
        Tensor xp = x;
        xp[7] += eps;
        const Tensor y1 = m.forward_projection(ag::Var::constant(xp), ForwardOptions::eval()).value();
        EXPECT_LT(max_abs_diff(y0, y1), 1e3 * eps);
    }
}
