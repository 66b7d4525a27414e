#pragma once

#include <cstdint>

namespace railmatch {

// Deterministic cross-platform RNG. std::mt19937_64 has a portable engine,
// but the standard distributions are implementation-defined, so uniform and
// normal draws are produced by hand here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9E3779B97F4A7C15ULL) {}

    std::uint64_t next_u64() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; caches the second variate.
    double normal();

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // modulo bias is negligible for n << 2^64
        return next_u64() % n;
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Stable per-item seed derivation: hash of (master_seed, index).
std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t index);

} // namespace railmatch
