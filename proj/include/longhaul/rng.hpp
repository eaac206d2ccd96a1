#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace longhaul {

// Counter-based pseudo-random stream. Draw k of stream (seed, tag...) is a
// pure function of its inputs, so a resumed consumer can continue the exact
// stream by remembering how many draws it has taken.
namespace rng {

inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline uint64_t derive(uint64_t seed, uint64_t a) { return mix64(seed ^ mix64(a)); }

inline uint64_t derive(uint64_t seed, uint64_t a, uint64_t b) {
    return derive(derive(seed, a), b);
}

inline uint64_t derive(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
    return derive(derive(seed, a, b), c);
}

// Uniform double in [0, 1) from draw `counter` of stream `key`.
inline double uniform(uint64_t key, uint64_t counter) {
    return static_cast<double>(mix64(key + 0x632BE59BD9B4E019ull * counter) >> 11) * 0x1.0p-53;
}

// Uniform double in [lo, hi).
inline double uniform(uint64_t key, uint64_t counter, double lo, double hi) {
    return lo + (hi - lo) * uniform(key, counter);
}

// Integer in [0, n). n must be > 0; modulo bias is irrelevant at toy scale.
inline int uniform_int(uint64_t key, uint64_t counter, int n) {
    return static_cast<int>(mix64(key + 0x9E6C63D0876A9A47ull * counter) % static_cast<uint64_t>(n));
}

// Index sampled from an explicit categorical distribution, CDF walk in
// index order so results are bit-stable across platforms.
inline int categorical(std::span<const double> probs, double u) {
    double cum = 0.0;
    for (size_t i = 0; i + 1 < probs.size(); ++i) {
        cum += probs[i];
        if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

} // namespace rng
} // namespace longhaul
