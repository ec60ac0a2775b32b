#pragma once

#include <cstdint>
#include <string_view>

namespace bertlab {

/// Deterministic splittable RNG (splitmix64 core).
///
/// All stochastic operations in the project draw from an explicit Rng so that
/// a run is a pure function of its seeds. Streams for independent purposes are
/// derived with stream_rng(seed, label, index); the derivation is stateless,
/// which is what makes checkpoint-resume bit-exact: the stream for step k
/// depends only on (seed, label, k), never on how many draws happened before.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). n must be > 0.
    uint64_t next_below(uint64_t n);

    /// Standard normal via Box-Muller; always consumes exactly two uniforms.
    double next_gauss();

    bool next_bernoulli(double p) { return next_double() < p; }

    /// Derive an independent stream keyed by a label.
    Rng split(std::string_view label) const;

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

/// FNV-1a 64-bit hash; also used for array checksums in checkpoints.
uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xCBF29CE484222325ull);
uint64_t fnv1a64(std::string_view s);

/// Stateless stream derivation: independent generator for (seed, label, index).
Rng stream_rng(uint64_t seed, std::string_view label, uint64_t index = 0);

} // namespace bertlab
