#ifndef ADVCL_FREQUENCY_HPP
#define ADVCL_FREQUENCY_HPP

#include <cmath>
#include <complex>
#include <memory>
#include <mutex>

#include <fftw3.h>

#include "errors.hpp"
#include "tensor.hpp"

namespace advcl {

enum class FrequencyBand { high, low };

// Binary radial mask on the centred spectrum of an H x W grid. A bin belongs
// to the low band when its Euclidean distance to the centroid
// (floor(H/2), floor(W/2)) is strictly below `radius`; every other bin is high.
// The two bands therefore partition the grid.
struct FrequencyMask {
    Real radius = 8;
    std::size_t height = 0;
    std::size_t width = 0;
    FrequencyBand keep = FrequencyBand::high;

    // (i, j) are coordinates in the centred (shifted) spectrum.
    [[nodiscard]] bool contains(std::size_t i, std::size_t j) const
    {
        const Real di = static_cast<Real>(i) - static_cast<Real>(height / 2);
        const Real dj = static_cast<Real>(j) - static_cast<Real>(width / 2);
        const bool low = std::sqrt(di * di + dj * dj) < radius;
        return keep == FrequencyBand::low ? low : !low;
    }

    // Same test for an unshifted FFT bin (u, v).
    [[nodiscard]] bool contains_unshifted(std::size_t u, std::size_t v) const
    {
        return contains((u + height / 2) % height, (v + width / 2) % width);
    }

    [[nodiscard]] Tensor centred() const
    {
        Tensor m(Shape{height, width});
        for (std::size_t i = 0; i < height; ++i) {
            for (std::size_t j = 0; j < width; ++j) {
                m.at(i, j) = contains(i, j) ? 1.0 : 0.0;
            }
        }
        return m;
    }
};

struct FrequencyComponents {
    Tensor high;
    Tensor low;
};

namespace detail {

struct FftwFree {
    void operator()(fftw_complex* p) const noexcept { fftw_free(p); }
};
struct FftwPlanDestroy {
    void operator()(fftw_plan_s* p) const noexcept
    {
        std::lock_guard lock(mutex());
        fftw_destroy_plan(p);
    }
    static std::mutex& mutex()
    {
        static std::mutex m;
        return m;
    }
};

using FftwBuffer = std::unique_ptr<fftw_complex, FftwFree>;
using FftwPlan = std::unique_ptr<fftw_plan_s, FftwPlanDestroy>;

[[nodiscard]] inline FftwPlan make_plan(std::size_t H, std::size_t W, fftw_complex* in, fftw_complex* out, int sign)
{
    std::lock_guard lock(FftwPlanDestroy::mutex());
    return FftwPlan(fftw_plan_dft_2d(static_cast<int>(H), static_cast<int>(W), in, out, sign, FFTW_ESTIMATE));
}

} // namespace detail

// Splits every [H, W] plane of x (any leading dims) into its high- and
// low-frequency parts. Outputs are real parts of the inverse transforms and
// are not clamped; high + low reproduces x up to round-off.
[[nodiscard]] inline FrequencyComponents fft_decompose(const Tensor& x, Real radius)
{
    if (x.rank() < 2) {
        throw ValidationError("fft_decompose expects at least a 2-D array, got " + shape_str(x.shape()));
    }
    if (!(radius >= 0)) {
        throw ValidationError("fft_decompose radius must be >= 0");
    }
    if (!x.all_finite()) {
        throw ValidationError("fft_decompose input contains non-finite values");
    }
    const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1), HW = H * W;
    const std::size_t planes = x.numel() / HW;
    FrequencyMask low_mask{radius, H, W, FrequencyBand::low};

    detail::FftwBuffer spatial(fftw_alloc_complex(HW));
    detail::FftwBuffer spectrum(fftw_alloc_complex(HW));
    detail::FftwBuffer band(fftw_alloc_complex(HW));
    auto forward = detail::make_plan(H, W, spatial.get(), spectrum.get(), FFTW_FORWARD);
    auto inverse = detail::make_plan(H, W, band.get(), spatial.get(), FFTW_BACKWARD);

    std::vector<char> is_low(HW);
    for (std::size_t u = 0; u < H; ++u) {
        for (std::size_t v = 0; v < W; ++v) {
            is_low[u * W + v] = low_mask.contains_unshifted(u, v) ? 1 : 0;
        }
    }

    FrequencyComponents out{Tensor(x.shape()), Tensor(x.shape())};
    const Real norm = 1.0 / static_cast<Real>(HW);
    for (std::size_t p = 0; p < planes; ++p) {
        const Real* src = x.data() + p * HW;
        for (std::size_t i = 0; i < HW; ++i) {
            spatial.get()[i][0] = src[i];
            spatial.get()[i][1] = 0;
        }
        fftw_execute(forward.get());
        for (int which = 0; which < 2; ++which) {
            const char want = which == 0 ? 1 : 0;
            for (std::size_t i = 0; i < HW; ++i) {
                const bool keep = is_low[i] == want;
                band.get()[i][0] = keep ? spectrum.get()[i][0] : 0;
                band.get()[i][1] = keep ? spectrum.get()[i][1] : 0;
            }
            fftw_execute(inverse.get());
            Real* dst = (which == 0 ? out.low : out.high).data() + p * HW;
            for (std::size_t i = 0; i < HW; ++i) {
                dst[i] = spatial.get()[i][0] * norm;
            }
        }
    }
    return out;
}

} // namespace advcl

#endif // ADVCL_FREQUENCY_HPP
