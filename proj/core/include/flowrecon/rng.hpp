#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace flowrecon {

// Counter-based generator built on splitmix64. Every draw is a pure
// function of (seed, counter), so independent streams can be derived
// from a root seed without sharing state.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), counter_(0) {}

    // Derive an independent stream, e.g. per parameter or per sample.
    Rng derive(uint64_t salt) const { return Rng(mix(seed_, salt ^ 0x9e3779b97f4a7c15ull)); }
    Rng derive(const std::string& name) const { return derive(fnv1a(name)); }

    uint64_t next_u64() { return mix(seed_, counter_++); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (one value per call, pair cached).
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    uint64_t seed() const { return seed_; }

    static uint64_t fnv1a(const std::string& s) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

private:
    static uint64_t mix(uint64_t seed, uint64_t counter) {
        uint64_t z = seed + counter * 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t counter_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace flowrecon
