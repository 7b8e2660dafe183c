#include <gtest/gtest.h>

#include <complex>
#include <numbers>

#include "test_util.hpp"

using namespace advcl;
using namespace advcl::testing;

namespace {

// Direct O(N^2)-per-bin DFT of one H x W plane, masked by centred radius, then
// inverted the same way.
Tensor naive_band(const Tensor& plane, Real radius, bool low)
{
    const std::size_t H = plane.dim(0), W = plane.dim(1);
    using C = std::complex<Real>;
    std::vector<C> spec(H * W);
    for (std::size_t u = 0; u < H; ++u) {
        for (std::size_t v = 0; v < W; ++v) {
            C s = 0;
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t w = 0; w < W; ++w) {
                    const Real ang = -2 * std::numbers::pi * (static_cast<Real>(u * h) / H + static_cast<Real>(v * w) / W);
                    s += plane.at(h, w) * C(std::cos(ang), std::sin(ang));
                }
            }
            // centred coordinates of bin (u, v)
            const Real ci = static_cast<Real>((u + H / 2) % H) - static_cast<Real>(H / 2);
            const Real cj = static_cast<Real>((v + W / 2) % W) - static_cast<Real>(W / 2);
            const bool in_low = std::sqrt(ci * ci + cj * cj) < radius;
            spec[u * W + v] = in_low == low ? s : C(0);
        }
    }
    Tensor out(Shape{H, W});
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            C s = 0;
            for (std::size_t u = 0; u < H; ++u) {
                for (std::size_t v = 0; v < W; ++v) {
                    const Real ang = 2 * std::numbers::pi * (static_cast<Real>(u * h) / H + static_cast<Real>(v * w) / W);
                    s += spec[u * W + v] * C(std::cos(ang), std::sin(ang));
                }
            }
            out.at(h, w) = s.real() / static_cast<Real>(H * W);
        }
    }
    return out;
}

Real energy(const Tensor& t) { return t.squared_norm(); }

} // namespace

TEST(Frequency, CheckerboardMatchesNaiveDft)
{
    Tensor x(Shape{4, 4});
    for (std::size_t h = 0; h < 4; ++h) {
        for (std::size_t w = 0; w < 4; ++w) {
            x.at(h, w) = (h + w) % 2 == 0 ? 1.0 : 0.0;
        }
    }
    const auto c = fft_decompose(x, 2);
    EXPECT_LT(max_abs_diff(c.low, naive_band(x, 2, true)), 1e-5);
    EXPECT_LT(max_abs_diff(c.high, naive_band(x, 2, false)), 1e-5);
}

TEST(Frequency, RandomPlanesMatchNaiveDft)
{
    for (std::uint64_t s = 0; s < 5; ++s) {
        const std::size_t H = 5 + s % 3, W = 6 + s % 2;
        const Tensor x = random_tensor({H, W}, s);
        for (Real r : {0.0, 1.0, 2.5, 4.0}) {
            const auto c = fft_decompose(x, r);
            EXPECT_LT(max_abs_diff(c.low, naive_band(x, r, true)), 1e-9);
            EXPECT_LT(max_abs_diff(c.high, naive_band(x, r, false)), 1e-9);
        }
    }
}

TEST(Frequency, ConstantImageIsAllLow)
{
    const Tensor x(Shape{1, 1, 8, 8}, 0.5);
    const auto c = fft_decompose(x, 1);
    EXPECT_LT(max_abs_diff(c.low, x), 1e-5);
    EXPECT_LT(c.high.max_abs(), 1e-5);
}

TEST(Frequency, RadiusZeroIsAllHigh)
{
    const Tensor x = random_tensor({2, 3, 8, 8}, 3);
    const auto c = fft_decompose(x, 0);
    EXPECT_LT(max_abs_diff(c.high, x), 1e-12);
    EXPECT_LT(c.low.max_abs(), 1e-12);
}

TEST(Frequency, FullCoverRadiusIsAllLow)
{
    const Tensor x = random_tensor({1, 1, 9, 7}, 4);
    const Real r = std::sqrt(4.0 * 4.0 + 3.0 * 3.0) + 1;
    const auto c = fft_decompose(x, r);
    EXPECT_LT(max_abs_diff(c.low, x), 1e-12);
    EXPECT_LT(c.high.max_abs(), 1e-12);
}

TEST(Frequency, PartitionLinearityAndMonotoneEnergy)
{
    const Tensor x = random_tensor({2, 1, 16, 16}, 5), y = random_tensor({2, 1, 16, 16}, 6);
    Real prev_low = -1, prev_high = 1e300;
    for (Real r : {0.0, 1.0, 2.0, 4.0, 8.0, 12.0, 100.0}) {
        const auto cx = fft_decompose(x, r), cy = fft_decompose(y, r);
        EXPECT_LT(max_abs_diff(cx.high + cx.low, x), 1e-12);
        const auto cz = fft_decompose(x * 2.0 + y * -0.5, r);
        EXPECT_LT(max_abs_diff(cz.low, cx.low * 2.0 + cy.low * -0.5), 1e-12);
        EXPECT_LT(max_abs_diff(cz.high, cx.high * 2.0 + cy.high * -0.5), 1e-12);
        EXPECT_GE(energy(cx.low), prev_low - 1e-12);
        EXPECT_LE(energy(cx.high), prev_high + 1e-12);
        prev_low = energy(cx.low);
        prev_high = energy(cx.high);
    }
}

TEST(Frequency, MaskBoundaryBelongsToHigh)
{
    FrequencyMask low{2.0, 8, 8, FrequencyBand::low};
    EXPECT_FALSE(low.contains(4, 6));  // distance exactly 2
    EXPECT_TRUE(low.contains(4, 5));
    FrequencyMask high{2.0, 8, 8, FrequencyBand::high};
    EXPECT_TRUE(high.contains(4, 6));
}

TEST(Frequency, Errors)
{
    Tensor x(Shape{4, 4}, 0.0);
    EXPECT_THROW((void)fft_decompose(x, -1), ValidationError);
    x[3] = std::numeric_limits<Real>::infinity();
    EXPECT_THROW((void)fft_decompose(x, 1), ValidationError);
}
