#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace etolab {

// Deterministic 64-bit generator (splitmix64). All randomness in the project
// flows through this class so results are pinned by our own code rather than
// by standard-library distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t bounded(std::uint64_t n) {
        // Lemire's multiply-shift; bias is rejected explicitly.
        std::uint64_t x = next();
        __uint128_t m = static_cast<__uint128_t>(x) * static_cast<__uint128_t>(n);
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            std::uint64_t t = -n % n;
            while (lo < t) {
                x = next();
                m = static_cast<__uint128_t>(x) * static_cast<__uint128_t>(n);
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    int index(std::size_t n) { return static_cast<int>(bounded(static_cast<std::uint64_t>(n))); }

    // Standard normal via Box-Muller.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over a byte string; used for seed derivation and vocab hashing.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Derives an independent stream seed from (master, lane, k). Distinct lanes
// give distinct streams for the same master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view lane, std::uint64_t k = 0) {
    Rng r(master ^ fnv1a(lane) ^ (k * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));
    return r.next();
}

}  // namespace etolab
