// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace segp {

/// SplitMix64 finalizer.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a over a byte string.
[[nodiscard]] constexpr std::uint64_t fnv1a(std::string_view s) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Counter-based seed split: sub-seed = mix(mix(master ^ hash(tag)) + index).
///
/// Every consumer of randomness draws from its own (tag, index) stream, so
/// toggling one pipeline stage never shifts the numbers another stage sees.
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                                  std::uint64_t index = 0) noexcept
{
    return mix64(mix64(master ^ fnv1a(tag)) + index);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t master, std::string_view tag, std::uint64_t index = 0)
        : engine_(derive_seed(master, tag, index))
    {
    }

    double normal(double mean = 0.0, double stddev = 1.0)
    {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace segp
