#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>

namespace diffrl {

// Counter-based generator built on the splitmix64 finalizer. A generator is a
// (key, counter) pair with value semantics: copying one and drawing from both
// copies yields identical streams. split(label) derives an independent stream
// whose draws never collide with the parent's, which is what keeps e.g.
// evaluation rollouts from perturbing training randomness.
class Rng {
public:
    Rng() : Rng(0) {}
    explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)), ctr_(0) {}

    // Independent child stream. The label participates in the key derivation
    // so split("actor") and split("critic") differ even at the same counter.
    Rng split(std::string_view label) const {
        uint64_t h = key_;
        for (char c : label) h = mix(h ^ static_cast<uint64_t>(static_cast<unsigned char>(c)));
        Rng child;
        child.key_ = mix(h ^ 0xbf58476d1ce4e5b9ull);
        child.ctr_ = 0;
        return child;
    }

    // Numbered child stream, for fan-out over seeds / episodes / workers.
    Rng split(std::string_view label, uint64_t index) const {
        Rng child = split(label);
        child.key_ = mix(child.key_ ^ (index * 0x94d049bb133111ebull + 0x2545f4914f6cdd1dull));
        return child;
    }

    uint64_t next_u64() { return mix(key_ + (++ctr_) * 0x9e3779b97f4a7c15ull); }

    // Uniform in [0, 1). 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n). n must be positive.
    uint64_t uniform_index(uint64_t n) {
        // Lemire-style rejection would be overkill; modulo bias at n << 2^64
        // is far below anything we can measure.
        return next_u64() % n;
    }

    // Standard normal via Box-Muller, caching the spare draw.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    void fill_normal(std::span<double> out) {
        for (double& x : out) x = normal();
    }

    void fill_uniform(std::span<double> out, double lo, double hi) {
        for (double& x : out) x = uniform(lo, hi);
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t ctr_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace diffrl
