#pragma once

#include <cstdint>

namespace spermdet {

/// Deterministic splitmix64 generator. The sequence depends only on the seed,
/// not on platform or standard-library internals, so every sampled value is
/// reproducible bit-for-bit across builds.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint32_t next_u32() { return static_cast<std::uint32_t>(next_u64() >> 32); }

    /// Uniform in [0, 1) with 24 bits of mantissa.
    float uniform() { return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n must be >= 1.
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

    /// Derive an independent stream from a base seed and up to three indices.
    /// Used to give each (iteration, image, purpose) its own reproducible rng.
    static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
        Rng mix(seed);
        mix.state_ ^= mix.next_u64() + a * 0x9e3779b97f4a7c15ULL;
        mix.state_ ^= mix.next_u64() + b * 0xc2b2ae3d27d4eb4fULL;
        mix.state_ ^= mix.next_u64() + c * 0x165667b19e3779f9ULL;
        mix.next_u64();
        return mix;
    }

private:
    std::uint64_t state_;
};

}  // namespace spermdet
