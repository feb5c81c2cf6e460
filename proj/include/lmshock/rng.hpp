#pragma once

#include <cstdint>
#include <random>

#include "lmshock/stats.hpp"

// Deterministic random streams. Every logical unit of the simulation (a
// municipality, a bootstrap replication, a Monte Carlo repetition) gets its
// own stream derived from the run seed and the unit's stable id, so results
// do not depend on scheduling or on how work is chunked across threads.

namespace lmshock {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Mixes a base seed with up to three stream tags into one 64-bit seed.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t tag0,
                                 std::uint64_t tag1 = 0, std::uint64_t tag2 = 0) {
    std::uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
    h = splitmix64(h ^ tag0);
    h = splitmix64(h ^ tag1);
    h = splitmix64(h ^ tag2);
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform on [0,1) built from the top 53 bits, identical on every platform.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal by inversion; keeps the stream consumption fixed at one
    // draw per variate, which matters for reproducibility.
    double normal() {
        double u;
        do { u = uniform(); } while (u <= 0.0);
        return norm_ppf(u);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    // Knuth multiplication method; fine for the small means used here.
    int poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean > 50.0) {
            int k = static_cast<int>(std::lround(normal(mean, std::sqrt(mean))));
            return k < 0 ? 0 : k;
        }
        double limit = std::exp(-mean), prod = uniform();
        int k = 0;
        while (prod > limit) {
            prod *= uniform();
            ++k;
        }
        return k;
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

} // namespace lmshock
