#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace unialign {

// Seed mixing and sampling helpers. std::mt19937_64 output is pinned by the
// standard, but the standard distributions are not; everything here maps raw
// engine output to values with fixed arithmetic so that identical seeds give
// identical bits on any platform.

// splitmix64 step; used to derive independent sub-stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(rng);
}

// One standard-normal draw via Box-Muller (cosine branch).
inline double normal_sample(std::mt19937_64& rng) {
    double u1 = uniform_unit(rng);
    double u2 = uniform_unit(rng);
    // u1 == 0 would take log(0); nudge to the smallest representable draw.
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Fisher-Yates with raw engine draws (modulo bias is irrelevant here and the
// result is reproducible everywhere, unlike std::shuffle).
template <typename T>
void shuffle_indices(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace unialign
