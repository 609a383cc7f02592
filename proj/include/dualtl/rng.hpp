#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dualtl {

// Seeded random helpers on top of std::mt19937_64. The engine itself is fully
// specified by the standard; the std distributions are not, so the draws below
// are spelled out to keep seeded outputs identical across standard libraries.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derive an independent stream seed from a master seed and an index.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(master ^ splitmix64(index + 0x51ed2701a2b5f693ULL));
}

/// Uniform double in [0, 1) using the top 53 bits of the engine output.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

/// Standard normal draw via Box-Muller (one value per call, no caching, so a
/// stream's output depends only on the call sequence).
inline double normal(std::mt19937_64& rng) {
    double u1 = uniform01(rng);
    double u2 = uniform01(rng);
    // u1 == 0 would take log(0); nudge to the smallest representable draw.
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

inline double normal(std::mt19937_64& rng, double mean, double stddev) {
    return mean + stddev * normal(rng);
}

/// Unbiased integer in [0, bound) by rejection.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t r = rng();
    while (r >= limit) r = rng();
    return r % bound;
}

/// Fisher-Yates with our own draws; std::shuffle's sequence is
/// implementation-defined, which would leak into seeded artifacts.
template <class T>
void shuffle_indices(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[uniform_below(rng, i)]);
}

}  // namespace dualtl
