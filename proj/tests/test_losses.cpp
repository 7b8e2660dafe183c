#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace advcl;
using namespace advcl::testing;

namespace {

// Direct per-pair evaluation: rows are view-major, positives share the sample index.
Real ntxent_oracle(const Tensor& z, std::size_t b, Real t)
{
    const std::size_t N = z.dim(0), d = z.dim(1);
    auto cos = [&](std::size_t i, std::size_t j) {
        Real dot = 0, ni = 0, nj = 0;
        for (std::size_t k = 0; k < d; ++k) {
            dot += z.at(i, k) * z.at(j, k);
            ni += z.at(i, k) * z.at(i, k);
            nj += z.at(j, k) * z.at(j, k);
        }
        return dot / std::sqrt(ni * nj);
    };
    Real total = 0;
    for (std::size_t i = 0; i < N; ++i) {
        Real den = 0;
        for (std::size_t k = 0; k < N; ++k) {
            if (k != i) {
                den += std::exp(cos(i, k) / t);
            }
        }
        for (std::size_t j = 0; j < N; ++j) {
            if (j != i && j % b == i % b) {
                total -= std::log(std::exp(cos(i, j) / t) / den);
            }
        }
    }
    return total / static_cast<Real>(b);
}

Tensor identical_rows(std::size_t n, std::size_t d)
{
    Tensor z(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            z.at(i, k) = 0.3 + 0.1 * static_cast<Real>(k);
        }
    }
    return z;
}

} // namespace

TEST(NtXent, MatchesBruteForceOracle)
{
    for (std::uint64_t s = 0; s < 50; ++s) {
        const std::size_t b = 1 + s % 5, m = 2 + s % 3, d = 3 + s % 4;
        const Real t = 0.1 + 0.2 * static_cast<Real>(s % 4);
        const Tensor z = random_tensor({b * m, d}, 1000 + s, -1, 1);
        const Real got = ntxent(ag::Var::constant(z), b, m, Temperature(t)).item();
        EXPECT_NEAR(got, ntxent_oracle(z, b, t), 1e-9 * std::max<Real>(1, std::abs(got))) << "seed " << s;
    }
}

TEST(NtXent, ClosedFormsOnIdenticalEmbeddings)
{
    EXPECT_NEAR(ntxent_two_view(identical_rows(1, 4).slice_rows(0, 1), identical_rows(1, 4)), 0.0, 1e-12);
    for (std::size_t b : {1u, 2u, 5u}) {
        const Tensor z = identical_rows(b, 4);
        EXPECT_NEAR(ntxent_two_view(z, z), 2 * std::log(2.0 * b - 1), 1e-9);
        for (std::size_t m : {2u, 3u, 4u}) {
            if (b * m < 2) {
                continue;
            }
            const Real want = static_cast<Real>(m * (m - 1)) * std::log(static_cast<Real>(b * m - 1));
            EXPECT_NEAR(ntxent(ag::Var::constant(identical_rows(b * m, 4)), b, m).item(), want, 1e-9);
        }
    }
}

TEST(NtXent, ScaleInvariance)
{
    const Tensor z = random_tensor({6, 5}, 3, -1, 1);
    const Real base = ntxent(ag::Var::constant(z), 3, 2).item();
    EXPECT_NEAR(ntxent(ag::Var::constant(z * 7.5), 3, 2).item(), base, 1e-10);
}

TEST(NtXent, PermutingSamplesConsistentlyLeavesLossUnchanged)
{
    const std::size_t b = 4, m = 3, d = 5;
    const Tensor z = random_tensor({b * m, d}, 4, -1, 1);
    std::vector<std::size_t> perm{2, 0, 3, 1};
    std::vector<std::size_t> rows;
    for (std::size_t v = 0; v < m; ++v) {
        for (std::size_t s : perm) {
            rows.push_back(v * b + s);
        }
    }
    const Tensor zp = z.gather_rows(rows);
    EXPECT_NEAR(ntxent(ag::Var::constant(zp), b, m).item(), ntxent(ag::Var::constant(z), b, m).item(), 1e-10);
}

TEST(NtXent, ProjectedFeaturesOrderIndependent)
{
    const Tensor a = random_tensor({3, 4}, 5, -1, 1), c = random_tensor({3, 4}, 6, -1, 1);
    const std::vector<Tensor> views{a, c};
    ProjectedFeatures pf = ProjectedFeatures::from_views(views);
    const Real base = ntxent_multi_view(pf);
    EXPECT_NEAR(base, ntxent_two_view(a, c), 1e-12);
    // shuffle rows together with their index arrays
    std::vector<std::size_t> order{5, 1, 3, 0, 4, 2};
    ProjectedFeatures sh;
    sh.z = pf.z.gather_rows(order);
    for (std::size_t r : order) {
        sh.view_index.push_back(pf.view_index[r]);
        sh.sample_index.push_back(pf.sample_index[r]);
    }
    EXPECT_NEAR(ntxent_multi_view(sh), base, 1e-12);
    sh.sample_index[0] = sh.sample_index[1];
    sh.view_index[0] = sh.view_index[1];
    EXPECT_THROW((void)ntxent_multi_view(sh), ValidationError);
}

TEST(NtXent, GradientMatchesFiniteDifferences)
{
    const std::size_t b = 3, m = 3;
    Tensor z = random_tensor({b * m, 4}, 7, -1, 1);
    ag::Var leaf = ag::Var::leaf(z, true);
    ag::backward(ntxent(leaf, b, m, Temperature(0.3)));
    std::vector<std::size_t> coords(z.numel());
    std::iota(coords.begin(), coords.end(), 0);
    const auto num = finite_diff([&] { return ntxent(ag::Var::constant(z), b, m, Temperature(0.3)).item(); }, z, coords);
    for (std::size_t k = 0; k < coords.size(); ++k) {
        EXPECT_NEAR(leaf.grad()[k], num[k], 1e-6);
    }
}

TEST(NtXent, InvalidInputs)
{
    EXPECT_THROW(Temperature(0.0), ValidationError);
    EXPECT_THROW((void)ntxent(ag::Var::constant(random_tensor({5, 3}, 1)), 2, 2), ValidationError);
    EXPECT_THROW((void)ntxent(ag::Var::constant(random_tensor({2, 3}, 1)), 2, 1), ValidationError);
}

TEST(CrossEntropy, UniformLogitsGiveLogK)
{
    for (std::size_t K : {2u, 3u, 10u}) {
        const Tensor logits(Shape{4, K}, 1.7);
        const std::vector<int> y{0, 1, 0, 1};
        EXPECT_NEAR(cross_entropy(logits, y), std::log(static_cast<Real>(K)), 1e-12);
    }
}

TEST(CrossEntropy, HandComputedValue)
{
    const Tensor logits(Shape{2, 3}, std::vector<Real>{1, 2, 3, 0, 0, std::log(2.0)});
    const std::vector<int> y{2, 0};
    const Real row0 = -(3 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
    const Real row1 = std::log(4.0);
    EXPECT_NEAR(cross_entropy(logits, y), (row0 + row1) / 2, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRange)
{
    const Tensor logits(Shape{1, 3}, 0.0);
    const std::vector<int> y{3};
    EXPECT_THROW((void)cross_entropy(logits, y), ValidationError);
    const std::vector<int> neg{-1};
    EXPECT_THROW((void)cross_entropy(logits, neg), ValidationError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences)
{
    Tensor logits = random_tensor({3, 4}, 8, -2, 2);
    const std::vector<int> y{1, 3, 0};
    ag::Var leaf = ag::Var::leaf(logits, true);
    ag::backward(cross_entropy(leaf, y));
    std::vector<std::size_t> coords(logits.numel());
    std::iota(coords.begin(), coords.end(), 0);
    const auto num = finite_diff([&] { return cross_entropy(logits, y); }, logits, coords);
    for (std::size_t k = 0; k < coords.size(); ++k) {
        EXPECT_NEAR(leaf.grad()[k], num[k], 1e-7);
    }
}

TEST(Trades, HandComputedKlAndBetaZero)
{
    // p = softmax([0, 0]) = (1/2, 1/2), q = softmax([0, ln 3]) = (1/4, 3/4)
    const Tensor clean(Shape{1, 2}, std::vector<Real>{0, 0});
    const Tensor adv(Shape{1, 2}, std::vector<Real>{0, std::log(3.0)});
    const std::vector<int> y{0};
    const Real kl = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
    EXPECT_NEAR(kl_divergence(ag::Var::constant(clean), ag::Var::constant(adv)).item(), kl, 1e-12);
    const Real ce = std::log(2.0);
    EXPECT_NEAR(trades_loss(ag::Var::constant(clean), ag::Var::constant(adv), y, 6.0).item(), ce + 6 * kl, 1e-12);
    EXPECT_NEAR(trades_loss(ag::Var::constant(clean), ag::Var::constant(adv), y, 0.0).item(), ce, 1e-12);
    EXPECT_NEAR(kl_divergence(ag::Var::constant(clean), ag::Var::constant(clean)).item(), 0.0, 1e-15);
    EXPECT_THROW((void)trades_loss(ag::Var::constant(clean), ag::Var::constant(adv), y, -1), ValidationError);
}

TEST(Trades, KlGradientMatchesFiniteDifferences)
{
    Tensor p = random_tensor({2, 3}, 9, -1, 1), q = random_tensor({2, 3}, 10, -1, 1);
    ag::Var lp = ag::Var::leaf(p, true), lq = ag::Var::leaf(q, true);
    ag::backward(kl_divergence(lp, lq));
    std::vector<std::size_t> coords(6);
    std::iota(coords.begin(), coords.end(), 0);
    const auto np = finite_diff([&] { return kl_divergence(ag::Var::constant(p), ag::Var::constant(q)).item(); }, p, coords);
    const auto nq = finite_diff([&] { return kl_divergence(ag::Var::constant(p), ag::Var::constant(q)).item(); }, q, coords);
    for (std::size_t k = 0; k < 6; ++k) {
        EXPECT_NEAR(lp.grad()[k], np[k], 1e-7);
        EXPECT_NEAR(lq.grad()[k], nq[k], 1e-7);
    }
}
