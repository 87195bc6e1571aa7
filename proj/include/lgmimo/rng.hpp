// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace lgmimo {

/// 64-bit FNV-1a. Used to turn purpose strings into RNG stream ids.
inline constexpr std::uint64_t fnv1a64(std::string_view text,
                                       std::uint64_t hash = 0xcbf29ce484222325ULL) noexcept
{
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Stream id for a named purpose, optionally qualified by a task id and a
/// sub-index (for example a sample number).
inline std::uint64_t stream_id(std::string_view purpose, std::uint64_t task = 0,
                               std::uint64_t index = 0)
{
    std::string key(purpose);
    key += '/';
    key += std::to_string(task);
    key += '/';
    key += std::to_string(index);
    return fnv1a64(key);
}

/// PCG64 (128-bit LCG state, XSL-RR output). Seeded from a 64-bit seed and a
/// 64-bit stream id; both are widened to 128 bits as `splitmix64(v) << 64 | v`.
/// All derived draws (uniform, Gaussian, bounded integers, shuffles) are
/// implemented here so that sequences do not depend on the standard library's
/// distribution implementations.
class RngStream {
public:
    using result_type = std::uint64_t;

    RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream)
    {
        const unsigned __int128 init_state = (static_cast<unsigned __int128>(splitmix64(seed)) << 64) | seed;
        const unsigned __int128 init_seq = (static_cast<unsigned __int128>(splitmix64(stream)) << 64) | stream;
        state_ = 0;
        inc_ = (init_seq << 1U) | 1U;
        step();
        state_ += init_state;
        step();
    }

    RngStream(std::uint64_t seed, std::string_view purpose, std::uint64_t task = 0, std::uint64_t index = 0)
        : RngStream(seed, stream_id(purpose, task, index))
    {
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept { return next(); }

    std::uint64_t next() noexcept
    {
        const unsigned __int128 old = state_;
        step();
        const auto hi = static_cast<std::uint64_t>(old >> 64);
        const auto lo = static_cast<std::uint64_t>(old);
        const auto rot = static_cast<unsigned>(old >> 122);
        const std::uint64_t x = hi ^ lo;
        return (x >> rot) | (x << ((64U - rot) & 63U));
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one output per call).
    double gaussian() noexcept
    {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double gaussian(double mean, double stddev) noexcept { return mean + stddev * gaussian(); }

    /// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
    std::complex<double> complex_gaussian(double variance = 1.0) noexcept
    {
        const double s = std::sqrt(variance / 2.0);
        const double re = gaussian();
        const double im = gaussian();
        return {s * re, s * im};
    }

    double exponential() noexcept { return -std::log(1.0 - uniform()); }

    /// Unbiased integer in [0, bound) by rejection.
    std::uint64_t below(std::uint64_t bound) noexcept
    {
        if (bound <= 1)
            return 0;
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold)
                return r % bound;
        }
    }

    template <typename T>
    void shuffle(std::span<T> values) noexcept
    {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t stream() const noexcept { return stream_; }

private:
    static constexpr unsigned __int128 kMultiplier =
        (static_cast<unsigned __int128>(0x2360ED051FC65DA4ULL) << 64) | 0x4385DF649FCCF645ULL;

    void step() noexcept { state_ = state_ * kMultiplier + inc_; }

    std::uint64_t seed_;
    std::uint64_t stream_;
    unsigned __int128 state_{};
    unsigned __int128 inc_{};
};

} // namespace lgmimo
