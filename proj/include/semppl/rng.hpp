#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>

namespace semppl {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based generator: output n is a pure function of (key, n).
///
/// Streams are addressed by coordinates, e.g. (seed, epoch, batch, datum), so
/// any stream can be regenerated independently of how many numbers other
/// streams consumed. The state is just (key, counter), which makes it trivial
/// to checkpoint. Distributions are implemented here rather than taken from
/// <random> so that values do not depend on the standard library vendor.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t key = 0, std::uint64_t counter = 0) noexcept
        : key_(key), counter_(counter) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * counter_++); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept {
        // Rejection on the top of the range keeps the draw exactly uniform.
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t r;
        do {
            r = (*this)();
        } while (r >= limit);
        return r % n;
    }

    /// Standard normal via Box-Muller (one value per call, no caching).
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

/// Stream purposes, used as the second coordinate of CounterRng::stream.
enum class StreamPurpose : std::uint64_t {
    dataset_means = 1,
    dataset_points = 2,
    label_split = 3,
    network_init = 4,
    queue_init = 5,
    epoch_shuffle = 6,
    views = 7,
    negatives = 8,
    semantic_positives = 9,
    probe = 10,
    holdout_points = 11,
};

inline CounterRng make_stream(std::uint64_t seed, StreamPurpose purpose,
                              std::initializer_list<std::uint64_t> rest = {}) noexcept {
    std::uint64_t key = splitmix64(seed ^ 0xa0761d6478bd642fULL);
    key = splitmix64(key ^ static_cast<std::uint64_t>(purpose));
    for (std::uint64_t c : rest) key = splitmix64(key ^ splitmix64(c + 0x632be59bd9b4e019ULL));
    return CounterRng(key);
}

}  // namespace semppl
