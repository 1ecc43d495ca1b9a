#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cforge {

// Counter-based deterministic generator built on the splitmix64 finalizer.
// Every draw is a pure function of (seed, stream, counter), so results are
// identical across platforms and independent of evaluation order. Derived
// streams (see fork()) let per-sample / per-epoch work consume randomness
// without perturbing sibling streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream), counter_(0) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Combines two words into a new stream id; used to derive child streams.
    static std::uint64_t combine(std::uint64_t a, std::uint64_t b) {
        return mix(a ^ (0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2)));
    }

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ ^ mix(stream_ ^ 0xd1b54a32d192ed03ull);
        return mix(z + counter_++ * 0x2545f4914f6cdd1dull);
    }

    // Uniform in [0, 1). 53-bit mantissa so doubles are exactly representable.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo + 1);
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    // Box-Muller without the cached spare: each call burns two uniforms, so
    // the draw count stays a pure function of call count (reproducibility).
    double normal() {
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Johnk's rejection sampler; adequate for the small shape parameters the
    // mixing augmentations use and free of incomplete-beta inversions.
    double beta(double a, double b) {
        for (;;) {
            const double x = std::pow(uniform(), 1.0 / a);
            const double y = std::pow(uniform(), 1.0 / b);
            if (x + y <= 1.0) {
                if (x + y > 0.0) return x / (x + y);
                continue;
            }
        }
    }

    Rng fork(std::uint64_t key) const { return Rng(seed_, combine(stream_, key)); }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_;
};

}  // namespace cforge
