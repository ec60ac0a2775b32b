#include "bertlab/rng.hpp"

#include <cmath>

namespace bertlab {

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

uint64_t fnv1a64(std::string_view s) {
    return fnv1a64(s.data(), s.size());
}

uint64_t Rng::next_below(uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = n * (UINT64_MAX / n);
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::next_gauss() {
    // (0,1] for u1 so log() stays finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Rng Rng::split(std::string_view label) const {
    Rng mixer(state_ ^ fnv1a64(label));
    return Rng(mixer.next_u64());
}

Rng stream_rng(uint64_t seed, std::string_view label, uint64_t index) {
    Rng mixer(seed ^ fnv1a64(label) ^ (index * 0xD1B54A32D192ED03ull));
    return Rng(mixer.next_u64());
}

} // namespace bertlab
