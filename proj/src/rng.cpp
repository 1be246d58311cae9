#include "fedcn/rng.hpp"

#include <cmath>
#include <numbers>

#include "fedcn/errors.hpp"

namespace fedcn {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

// FNV-1a, used only to fold a label into a seed.
std::uint64_t hash_label(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t s = seed ^ rotl(tag, 17) ^ 0x9e3779b97f4a7c15ULL;
    splitmix64(s);
    return splitmix64(s) ^ tag;
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = splitmix64(s);
}

RngStream RngStream::derive(std::string_view label) const {
    return RngStream(mix_seed(seed_, hash_label(label)));
}

RngStream RngStream::derive(std::uint64_t index) const {
    std::uint64_t s = index;
    return RngStream(mix_seed(seed_, splitmix64(s)));
}

std::uint64_t RngStream::next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t RngStream::uniform_index(std::size_t n) {
    if (n == 0) throw InvalidArgument("uniform_index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

double RngStream::normal() {
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::log_gamma_variate(double shape) {
    if (!(shape > 0.0)) throw InvalidArgument("gamma: shape must be positive");
    if (shape < 1.0) {
        // G(a) = G(a + 1) * U^(1/a), evaluated in log space.
        double u;
        do {
            u = uniform();
        } while (u <= 0.0);
        return log_gamma_variate(shape + 1.0) + std::log(u) / shape;
    }
    // Marsaglia-Tsang.
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        const double x = normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        double u;
        do {
            u = uniform();
        } while (u <= 0.0);
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return std::log(d * v);
    }
}

std::size_t RngStream::categorical(std::span<const double> weights) {
    if (weights.empty()) throw InvalidArgument("categorical: no categories");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w)) throw InvalidArgument("categorical: invalid weight");
        total += w;
    }
    if (total <= 0.0) return uniform_index(weights.size());
    const double target = uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        acc += weights[i];
        last_positive = i;
        if (target < acc) return i;
    }
    return last_positive;
}

}  // namespace fedcn
