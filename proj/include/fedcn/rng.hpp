#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace fedcn {

/// Splittable pseudo-random stream (xoshiro256** core, splitmix64 seeding).
///
/// All distributions are implemented here rather than through <random> so that a
/// seed yields the same sequence with every standard library. Child streams are
/// derived from the stream's seed and a label, never from its current state, so a
/// new consumer never perturbs the draws seen by existing ones.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0);

    std::uint64_t seed() const noexcept { return seed_; }

    RngStream derive(std::string_view label) const;
    RngStream derive(std::uint64_t index) const;

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n); n must be positive.
    std::size_t uniform_index(std::size_t n);

    /// Standard normal via Box-Muller (no cached second variate).
    double normal();

    /// log of a Gamma(shape, 1) variate; stays finite for very small shapes.
    double log_gamma_variate(double shape);

    /// Index drawn proportionally to nonnegative weights; falls back to uniform
    /// when every weight is zero.
    std::size_t categorical(std::span<const double> weights);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = uniform_index(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace fedcn
