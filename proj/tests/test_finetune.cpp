#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace advcl;
using namespace advcl::testing;

namespace {

FinetuneConfig tiny_finetune(FinetuneMode mode)
{
    FinetuneConfig c;
    c.mode = mode;
    c.epochs = 3;
    c.batch_size = 16;
    c.lr = 0.05;
    c.budget = PerturbBudget{8.0 / 255, 2, 2.0 / 255, PerturbInit::uniform_random};
    c.select_attack_steps = 2;
    c.val_fraction = 0.25;
    return c;
}

std::unique_ptr<RobustModel> fresh(std::uint64_t seed = 1)
{
    return std::make_unique<RobustModel>(tiny_encoder(1, 8, seed));
}

// Two classes of constant images (dark vs bright) with small pixel noise.
Dataset separable(std::size_t n)
{
    Dataset d;
    d.name = "separable";
    d.num_classes = 2;
    d.images = random_tensor({n, 1, 8, 8}, 77, -0.05, 0.05);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        d.labels.push_back(y);
        for (std::size_t k = 0; k < 64; ++k) {
            d.images[i * 64 + k] += y ? 0.8 : 0.2;
        }
    }
    return d;
}

} // namespace

TEST(Finetune, HeadOnlyModesLeaveTheEncoderUntouched)
{
    const Dataset d = tiny_synthetic(48);
    for (auto mode : {FinetuneMode::slf, FinetuneMode::alf}) {
        for (bool cache : {true, false}) {
            FinetuneConfig c = tiny_finetune(mode);
            c.cache_features = cache;
            auto r = finetune(fresh(), d, c);
            EXPECT_EQ(r.encoder_hash_before, r.encoder_hash_after) << to_string(mode);
            EXPECT_FALSE(r.encoder_grads_seen);
            EXPECT_TRUE(r.encoder_frozen);
        }
    }
}

TEST(Finetune, AffUpdatesTheEncoder)
{
    const Dataset d = tiny_synthetic(48);
    auto r = finetune(fresh(), d, tiny_finetune(FinetuneMode::aff));
    EXPECT_NE(r.encoder_hash_before, r.encoder_hash_after);
    EXPECT_FALSE(r.encoder_frozen);
}

TEST(Finetune, AlfWithZeroBudgetFollowsTheSlfTrajectory)
{
    const Dataset d = tiny_synthetic(48);
    FinetuneConfig slf = tiny_finetune(FinetuneMode::slf);
    slf.cache_features = false;
    FinetuneConfig alf = tiny_finetune(FinetuneMode::alf);
    alf.budget.epsilon = 0;
    auto a = finetune(fresh(), d, slf);
    auto b = finetune(fresh(), d, alf);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        EXPECT_EQ(a.history[e].means.at("loss"), b.history[e].means.at("loss"));
        EXPECT_EQ(a.history[e].means.at("val_sa"), b.history[e].means.at("val_ra"));
    }
    EXPECT_EQ(a.model->fingerprint(), b.model->fingerprint());
}

TEST(Finetune, CachedFeaturesMatchTheDirectPath)
{
    const Dataset d = tiny_synthetic(48);
    FinetuneConfig c = tiny_finetune(FinetuneMode::slf);
    auto a = finetune(fresh(), d, c);
    c.cache_features = false;
    auto b = finetune(fresh(), d, c);
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        EXPECT_NEAR(a.history[e].means.at("loss"), b.history[e].means.at("loss"), 1e-12);
    }
}

TEST(Finetune, TradesWithZeroBetaIsCleanCrossEntropy)
{
    const Dataset d = tiny_synthetic(32);
    FinetuneConfig c = tiny_finetune(FinetuneMode::aff);
    c.trades_beta = 0;
    c.epochs = 1;
    auto r = finetune(fresh(), d, c);
    EXPECT_NEAR(r.history[0].means.at("loss"), r.history[0].means.at("clean_ce"), 1e-12);
}

TEST(Finetune, MultiStepLearningRate)
{
    const Dataset d = tiny_synthetic(16);
    FinetuneConfig c = tiny_finetune(FinetuneMode::slf);
    c.lr = 0.1;
    c.epochs = 21;
    auto r = finetune(fresh(), d, c);
    EXPECT_NEAR(r.history[0].lr, 0.1, 1e-15);
    EXPECT_NEAR(r.history[14].lr, 0.1, 1e-15);
    EXPECT_NEAR(r.history[15].lr, 0.01, 1e-15);
    EXPECT_NEAR(r.history[20].lr, 0.001, 1e-15);
}

TEST(Finetune, SeparableDataIsFitAlmostPerfectly)
{
    const Dataset d = separable(64);
    FinetuneConfig c = tiny_finetune(FinetuneMode::slf);
    c.epochs = 30;
    c.lr = 0.5;
    c.val_fraction = 0;
    auto r = finetune(fresh(), d, c);
    EXPECT_GE(r.history.back().means.at("train_acc"), 0.99);
    EXPECT_GE(eval_sa(*r.model, d), 0.99);
}

TEST(Finetune, BestEpochIsRestoredAndCheckpointWritten)
{
    const Dataset d = tiny_synthetic(48);
    const auto dir = std::filesystem::temp_directory_path() / "advcl_finetune_out";
    std::filesystem::remove_all(dir);
    TrainOptions o;
    o.output_dir = dir;
    auto r = finetune(fresh(), d, tiny_finetune(FinetuneMode::slf), o);
    Real best = 0;
    for (const auto& e : r.history) {
        best = std::max(best, e.means.at("val_sa"));
    }
    EXPECT_EQ(r.best_score, best);
    EXPECT_EQ(r.history[r.best_epoch].means.at("val_sa"), best);
    auto ck = load_checkpoint(dir / "finetuned.ckpt");
    EXPECT_EQ(ck.model->fingerprint(), r.model->fingerprint());
    EXPECT_TRUE(std::filesystem::exists(dir / "metrics.jsonl"));
    std::filesystem::remove_all(dir);
}

TEST(Finetune, ConfigAndInputErrors)
{
    EXPECT_THROW((void)parse_finetune_mode("full"), ConfigError);
    EXPECT_EQ(parse_finetune_mode("ALF"), FinetuneMode::alf);
    FinetuneConfig c = tiny_finetune(FinetuneMode::slf);
    c.val_fraction = 1;
    EXPECT_THROW((void)finetune(fresh(), tiny_synthetic(8), c), ConfigError);
    c = tiny_finetune(FinetuneMode::slf);
    c.resize_inputs = false;
    EXPECT_THROW((void)finetune(fresh(), tiny_synthetic(8, 16), c), ConfigError);
    c.resize_inputs = true;
    auto r = finetune(fresh(), tiny_synthetic(16, 16), c);
    EXPECT_EQ(r.history.size(), 3u);
}
