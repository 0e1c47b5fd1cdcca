#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace earseg {

// Bad user input (missing files, shape mismatches, invalid config). CLI exit 2.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corrupt or inconsistent on-disk state (checkpoints, caches). CLI exit 3.
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Single RNG type used everywhere so seeded runs are bit-reproducible.
using Rng = std::mt19937;

inline Rng make_rng(std::uint32_t seed) { return Rng(seed); }

// FNV-1a, used to fingerprint configs for cache validation.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace earseg
