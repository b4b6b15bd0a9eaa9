#pragma once

#include <cmath>
#include <cstdint>

namespace edgediff {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derive an independent stream seed from (seed, stream index).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t st = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    splitmix64(st);
    return splitmix64(st);
}

// xoshiro256++ with splitmix64 seeding. Self-contained so that generated
// streams are identical across standard libraries and platforms.
struct Rng {
    uint64_t s[4] = {1, 2, 3, 4};
    bool have_spare = false;
    double spare = 0.0;

    explicit Rng(uint64_t seed = 0) {
        uint64_t sm = seed;
        for (auto& si : s) si = splitmix64(sm);
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t next() {
        const uint64_t result = rotl(s[0] + s[3], 23) + s[0];
        const uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    // [0, 1)
    double uniform() { return (next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    int uniform_int(int n) {
        int k = (int)(uniform() * n);
        return k < n ? k : n - 1;
    }

    // Marsaglia polar method; spare cached for determinism, not speed.
    double normal() {
        if (have_spare) {
            have_spare = false;
            return spare;
        }
        double u, v, r2;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            r2 = u * u + v * v;
        } while (r2 >= 1.0 || r2 == 0.0);
        const double f = std::sqrt(-2.0 * std::log(r2) / r2);
        spare = v * f;
        have_spare = true;
        return u * f;
    }
};

}  // namespace edgediff
