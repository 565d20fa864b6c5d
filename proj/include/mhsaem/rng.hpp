#pragma once

// Counter-based random streams. Every draw made by the trainers is a pure
// function of (seed, purpose, a, b, c), so results do not depend on the order
// in which datapoints are processed and runs can be resumed from a checkpoint
// that records only the iteration counter.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>

namespace mhsaem {

enum class Stream : std::uint64_t {
    init = 1,
    chain_init = 2,
    batch = 3,
    mh_step = 4,
    generate = 5,
    overlap = 6,
    test = 7,
};

namespace detail {
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
} // namespace detail

/// A UniformRandomBitGenerator whose starting state is a hash of its key.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t seed, Stream purpose = Stream::test, std::uint64_t a = 0,
                        std::uint64_t b = 0, std::uint64_t c = 0) noexcept {
        std::uint64_t h = detail::splitmix64(seed);
        h = detail::splitmix64(h ^ static_cast<std::uint64_t>(purpose));
        h = detail::splitmix64(h ^ a);
        h = detail::splitmix64(h ^ (b * 0x632be59bd9b4e019ULL));
        h = detail::splitmix64(h ^ (c * 0x8cb92ba72f3d8dd7ULL));
        state_ = h;
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        // Lemire's multiply-shift with rejection.
        std::uint64_t x = (*this)();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                x = (*this)();
                m = static_cast<__uint128_t>(x) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal via Box-Muller; both uniforms come from this stream.
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t state_;
};

/// Inverse-CDF draw from unnormalized nonnegative weights with a precomputed total.
inline std::size_t sample_categorical(std::span<const double> weights, double total, double u) noexcept {
    double target = u * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (weights[k] > 0.0) last_positive = k;
        acc += weights[k];
        if (target < acc) return k;
    }
    return last_positive;
}

inline std::size_t sample_categorical(std::span<const double> weights, double u) noexcept {
    double total = 0.0;
    for (double w : weights) total += w;
    return sample_categorical(weights, total, u);
}

} // namespace mhsaem
