#pragma once

#include <cmath>
#include <cstdint>

#include "mflab/matrix.hpp"

namespace mflab {

/// Counter-based seedable generator: output k is a bit-mix of
/// seed + k * golden-gamma (splitmix64 finalizer). Identical seeds reproduce
/// identical draw sequences bit-for-bit on one platform. Normals come from
/// the polar Box-Muller method; the cached second variate is part of the
/// stream state.
class NoiseStream {
public:
    explicit NoiseStream(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        counter_ += 1;
        std::uint64_t z = seed_ + counter_ * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal (polar Box-Muller; rejection advances the counter).
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        while (true) {
            const double a = 2.0 * uniform() - 1.0;
            const double b = 2.0 * uniform() - 1.0;
            const double s = a * a + b * b;
            if (s > 0.0 && s < 1.0) {
                const double f = std::sqrt(-2.0 * std::log(s) / s);
                cache_ = b * f;
                has_cache_ = true;
                return a * f;
            }
        }
    }

    Vector normal_vector(std::size_t n) {
        Vector v(n);
        for (double& x : v) x = normal();
        return v;
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

}  // namespace mflab
