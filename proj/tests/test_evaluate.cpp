#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace advcl;
using namespace advcl::testing;

namespace {

// Mean-brightness classifier on 4x4 images: class 1 iff mean > 0.5.
LinearClassifier brightness_classifier()
{
    LinearClassifier m{Tensor(Shape{2, 16}), Tensor(Shape{2}, std::vector<Real>{0.5, -0.5})};
    for (std::size_t j = 0; j < 16; ++j) {
        m.w.at(0, j) = -1.0 / 16;
        m.w.at(1, j) = 1.0 / 16;
    }
    return m;
}

Dataset brightness_data(std::size_t n, Real lo, Real hi, std::uint64_t seed)
{
    Dataset d;
    d.name = "brightness";
    d.num_classes = 2;
    d.images = random_tensor({n, 1, 4, 4}, seed, lo, hi);
    for (std::size_t i = 0; i < n; ++i) {
        Real m = 0;
        for (std::size_t k = 0; k < 16; ++k) {
            m += d.images[i * 16 + k];
        }
        d.labels.push_back(m / 16 > 0.5 ? 1 : 0);
    }
    return d;
}

} // namespace

TEST(Evaluate, ConstantClassifierScoresChanceOnBalancedLabels)
{
    Dataset d = tiny_synthetic(40, 4);
    for (std::size_t i = 0; i < 40; ++i) {
        d.labels[i] = static_cast<int>(i % 2);
    }
    const ConstantClassifier m{2};
    EXPECT_DOUBLE_EQ(eval_sa(m, d), 0.5);
    EXPECT_DOUBLE_EQ(eval_ra(m, d, PerturbBudget{0.1, 5, 0.02, PerturbInit::zero}), 0.5);
}

TEST(Evaluate, PerfectClassifierScoresOne)
{
    const Dataset d = brightness_data(50, 0, 1, 1);
    EXPECT_DOUBLE_EQ(eval_sa(brightness_classifier(), d, 7), 1.0);
}

TEST(Evaluate, ZeroEpsilonRobustAccuracyEqualsStandard)
{
    const auto m = LinearClassifier{random_tensor({3, 16}, 2, -1, 1), random_tensor({3}, 3, -1, 1)};
    Dataset d = tiny_synthetic(30, 4, 0, 3);
    const Real sa = eval_sa(m, d);
    EXPECT_DOUBLE_EQ(eval_ra(m, d, PerturbBudget{0.0, 10, 0.01, PerturbInit::uniform_random}), sa);
}

TEST(Evaluate, RobustAccuracyMatchesLinearMarginOracle)
{
    // Inputs far from the box edges, so the l_inf optimum is reachable: a
    // sample survives iff its margin exceeds eps * ||w1 - w0||_1 = eps * 2.
    const auto m = brightness_classifier();
    const Dataset d = brightness_data(200, 0.35, 0.65, 4);
    for (Real eps : {0.005, 0.01, 0.02}) {
        std::size_t survive = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            Real mean = 0;
            for (std::size_t k = 0; k < 16; ++k) {
                mean += d.images[i * 16 + k];
            }
            const Real margin = std::abs(2 * (mean / 16 - 0.5));
            survive += margin > 2 * eps ? 1 : 0;
        }
        EvalOptions o;
        o.batch_size = 64;
        const Real ra = eval_ra(m, d, PerturbBudget{eps, 20, eps / 5, PerturbInit::zero}, o);
        EXPECT_DOUBLE_EQ(ra, static_cast<Real>(survive) / 200.0) << "eps " << eps;
    }
}

TEST(Evaluate, SweepShapeZeroColumnAndReportFiles)
{
    const auto m = brightness_classifier();
    const Dataset d = brightness_data(40, 0.2, 0.8, 5);
    const auto r = eval_sweep(m, d, {0.0, 0.01, 0.03}, {1, 5});
    ASSERT_EQ(r.ra.size(), 3u);
    ASSERT_EQ(r.ra[0].size(), 2u);
    EXPECT_EQ(r.ra[0][0], r.sa);
    EXPECT_EQ(r.ra[0][1], r.sa);
    EXPECT_TRUE(r.warnings.empty());
    const auto j = r.to_json();
    EXPECT_EQ(j.at("ra_grid").size(), 6u);
    const auto dir = std::filesystem::temp_directory_path() / "advcl_eval_report";
    std::filesystem::remove_all(dir);
    write_eval_report(dir, r);
    for (const char* f : {"report.json", "report.csv", "ra_vs_eps.svg", "ra_vs_steps.svg"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    }
    std::filesystem::remove_all(dir);
    EXPECT_THROW((void)eval_sweep(m, d, {}, {1}), ValidationError);
}

TEST(Evaluate, ScreenFlagsNonMonotoneSweeps)
{
    EvalReport r;
    r.eps_list = {0, 2.0 / 255, 4.0 / 255};
    r.steps_list = {1, 10};
    r.ra = {{0.9, 0.9}, {0.4, 0.5}, {0.52, 0.55}};
    EXPECT_EQ(increases({0.9, 0.5, 0.52}, 0.005), (std::vector<std::size_t>{1}));
    const auto w = screen_sweep(r, 0.005);
    ASSERT_EQ(w.size(), 4u);  // one epsilon increase per column, one step increase per noisy row
    EXPECT_NE(w[1].find("with epsilon"), std::string::npos);
    EXPECT_NE(w[2].find("with steps"), std::string::npos);
    EXPECT_TRUE(screen_sweep(r, 0.2).empty());
}

TEST(Evaluate, LabelCountMismatch)
{
    const auto m = brightness_classifier();
    const Tensor x = random_tensor({3, 1, 4, 4}, 1);
    const std::vector<int> y{0, 1};
    EXPECT_THROW((void)eval_sa(m, x, y), ValidationError);
}
