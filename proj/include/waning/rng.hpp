#pragma once

// Keyed random streams. Every stochastic quantity in the library is drawn from
// a Stream whose key is derived from (seed, path...), e.g. (seed, individual)
// or (seed, replicate). Results therefore never depend on scheduling.

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace waning::rng {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t key = mix64(seed ^ 0x6a09e667f3bcc908ULL);
    for (std::uint64_t p : path) {
        key = mix64(key ^ mix64(p + 0x9e3779b97f4a7c15ULL));
    }
    return key;
}

inline std::uint64_t key_of(double x) noexcept { return std::bit_cast<std::uint64_t>(x); }

// SplitMix64 sequence started at a derived key. Satisfies
// UniformRandomBitGenerator so it can drive <random> distributions.
class Stream {
public:
    using result_type = std::uint64_t;

    explicit Stream(std::uint64_t key) noexcept : state_(key) {}
    Stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept
        : state_(derive_key(seed, path)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) noexcept { return uniform() < p; }

private:
    std::uint64_t state_;
};

} // namespace waning::rng
