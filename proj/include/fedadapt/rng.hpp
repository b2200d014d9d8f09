// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fedadapt {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from up to three components
// (experiment seed, round index, client id, ...).
inline uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = splitmix64(a);
    h = splitmix64(h ^ (b + 0x9e3779b97f4a7c15ULL));
    h = splitmix64(h ^ (c + 0x6a09e667f3bcc909ULL));
    return h;
}

// Seeded RNG with fully specified transforms. The engine (mt19937_64) has a
// standard-mandated sequence and every distribution below is implemented
// explicitly, so a given seed produces the same stream on any platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // (0, 1)
    double uniform_pos() {
        double u;
        do {
            u = uniform();
        } while (u <= 0.0);
        return u;
    }

    // [0, n), unbiased enough for n << 2^64
    int uniform_int(int n) {
        return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                                 static_cast<unsigned __int128>(n)) >> 64);
    }

    float uniform_float(float lo, float hi) {
        return lo + static_cast<float>(uniform()) * (hi - lo);
    }

    // Standard normal via Box-Muller (cosine branch; two uniforms per draw).
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Gamma(alpha, 1) via Marsaglia-Tsang squeeze, with the standard
    // boost for alpha < 1.
    double gamma(double alpha) {
        if (alpha < 1.0) {
            const double g = gamma(alpha + 1.0);
            return g * std::pow(uniform_pos(), 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_pos();
            if (u < 1.0 - 0.0331 * x * x * x * x) {
                return d * v;
            }
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
                return d * v;
            }
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (size_t i = items.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace fedadapt
