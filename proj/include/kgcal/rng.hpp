#pragma once

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace kgcal {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) noexcept
{
    std::uint64_t h = mix64(base);
    for (std::uint64_t p : parts) {
        h = mix64(h ^ p);
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, double value) noexcept
{
    return derive_seed(base, {std::bit_cast<std::uint64_t>(value)});
}

// Uniform integer in [0, n) by modulo with rejection, so results do not
// depend on the standard library's distribution implementation.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n)
{
    const std::uint64_t limit = Rng::max() - (Rng::max() % n);
    std::uint64_t x = rng();
    while (x >= limit) {
        x = rng();
    }
    return x % n;
}

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform_unit(Rng& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace kgcal
