#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace qcp {

using Rng = std::mt19937_64;

/// Thrown when an estimator is asked to fit more structure than the data supports.
class insufficient_data_error : public std::runtime_error {
public:
    explicit insufficient_data_error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool ok, const char* message) {
    if (!ok) throw std::invalid_argument(message);
}

/// Uniform integer in [0, n). n must be positive.
inline int uniform_index(Rng& rng, int n) {
    std::uniform_int_distribution<int> d(0, n - 1);
    return d(rng);
}

inline double uniform_unit(Rng& rng) {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(rng);
}

/// Zero-mean normal draw with the given variance (not stddev).
inline double normal_draw(Rng& rng, double variance) {
    if (variance <= 0.0) return 0.0;
    std::normal_distribution<double> d(0.0, std::sqrt(variance));
    return d(rng);
}

/// FNV-1a over the raw bytes of a feature vector. Used for exact-state
/// lookups and trace logging; not a ξ-aware comparison.
inline std::uint64_t feature_hash(const std::vector<double>& features) {
    std::uint64_t h = 1469598103934665603ull;
    for (double f : features) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(f));
        std::memcpy(&bits, &f, sizeof(bits));
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

/// Deterministic seed derivation for independent sub-streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace qcp
