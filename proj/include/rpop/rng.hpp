#pragma once

#include <cmath>
#include <cstdint>

#include "rpop/mat.hpp"

namespace rpop {

// SplitMix64 with a hand-rolled Box-Muller transform. std::normal_distribution
// is implementation-defined, and seeded models must reproduce bit-for-bit
// across toolchains.
struct SplitMix64 {
    uint64_t state;

    explicit SplitMix64(uint64_t seed = 0) : state(seed) {}

    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1].
    double next_unit_open() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }

    double next_gaussian() {
        const double u1 = next_unit_open();
        const double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return next() % n; }
};

// Deterministic substream derivation: decorrelates (seed, stream-id) pairs.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    SplitMix64 r(a ^ (0x9e3779b97f4a7c15ULL + (b << 1)));
    r.next();
    return r.next();
}

inline void fill_gaussian(Mat<double>& m, SplitMix64& rng, double stddev) {
    for (auto& v : m.data) v = rng.next_gaussian() * stddev;
}

inline Mat<double> gaussian_mat(int rows, int cols, uint64_t seed, double stddev) {
    Mat<double> m(rows, cols);
    SplitMix64 rng(seed);
    fill_gaussian(m, rng, stddev);
    return m;
}

}  // namespace rpop
