#pragma once

#include <cmath>
#include <cstdint>

namespace martnet {

// Counter-based randomness: every draw is a pure function of a key chain,
// so ensembles are bit-identical no matter how work is scheduled.

/// SplitMix64 finalizer; the only mixing primitive used anywhere.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) noexcept {
    return mix64(mix64(a) ^ b);
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) noexcept {
    return mix64(mix64(a, b) ^ c);
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                              std::uint64_t d) noexcept {
    return mix64(mix64(a, b, c) ^ d);
}

/// Uniform double in [0,1) from 53 high bits.
inline double unit_double(std::uint64_t h) noexcept {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Uniform double in (0,1]; safe as a log argument.
inline double unit_double_open(std::uint64_t h) noexcept {
    return static_cast<double>((h >> 11) + 1) * 0x1.0p-53;
}

/// Standard normal draw keyed by an arbitrary counter (Box-Muller, cosine branch).
inline double normal_double(std::uint64_t key) noexcept {
    const double u1 = unit_double_open(mix64(key, 0x6e6f726d31ULL));
    const double u2 = unit_double(mix64(key, 0x6e6f726d32ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Stream tags keeping independent uses of one master seed apart.
namespace rng_stream {
constexpr std::uint64_t kPaths = 0x70617468ULL;      // Brownian increments
constexpr std::uint64_t kSchedule = 0x73636865ULL;   // mini-batch index sets
constexpr std::uint64_t kInit = 0x696e6974ULL;       // network initialization
constexpr std::uint64_t kStarts = 0x73747274ULL;     // start-point sampling
constexpr std::uint64_t kQuad = 0x71756164ULL;       // Monte Carlo quadrature
constexpr std::uint64_t kDriftless = 0x64726674ULL;  // value-loss companion paths
}  // namespace rng_stream

}  // namespace martnet
