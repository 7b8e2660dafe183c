#ifndef ADVCL_RANDOM_HPP
#define ADVCL_RANDOM_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

#include "tensor.hpp"

namespace advcl {

using Rng = std::mt19937_64;

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Stream seeds are derived from (base seed, tags) so that e.g. the augmentation
// draw of epoch 3, step 7 does not depend on how many numbers earlier steps used.
[[nodiscard]] inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) noexcept
{
    std::uint64_t h = splitmix64(base);
    for (auto t : tags) {
        h = splitmix64(h ^ splitmix64(t + 0x632BE59BD9B4E019ULL));
    }
    return h;
}

[[nodiscard]] inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags = {})
{
    return Rng(derive_seed(base, tags));
}

[[nodiscard]] inline Real uniform01(Rng& rng)
{
    return std::uniform_real_distribution<Real>(0.0, 1.0)(rng);
}

[[nodiscard]] inline Tensor uniform_tensor(Shape shape, Real lo, Real hi, Rng& rng)
{
    Tensor t(std::move(shape));
    std::uniform_real_distribution<Real> dist(lo, hi);
    for (Real& v : t.values()) {
        v = dist(rng);
    }
    return t;
}

[[nodiscard]] inline Tensor normal_tensor(Shape shape, Real mean, Real stddev, Rng& rng)
{
    Tensor t(std::move(shape));
    std::normal_distribution<Real> dist(mean, stddev);
    for (Real& v : t.values()) {
        v = dist(rng);
    }
    return t;
}

} // namespace advcl

#endif // ADVCL_RANDOM_HPP
