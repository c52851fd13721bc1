#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace renewal {

// SplitMix64 finalizer. Used both as a stream mixer and a content hash.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based PRNG: the state is (key, counter), so independent substreams
// can be derived from integer keys without sharing mutable state. All
// randomness in the project flows through named substreams of one run seed.
class Prng {
  public:
    explicit Prng(std::uint64_t seed) : key_(mix64(seed)) {}
    Prng(std::uint64_t seed, std::uint64_t stream)
        : key_(mix64(mix64(seed) ^ (0xd1342543de82ef95ULL * (stream + 1)))) {}
    Prng(std::uint64_t seed, std::uint64_t s1, std::uint64_t s2)
        : Prng(mix64(seed) ^ mix64(s1 + 0x632be59bd9b4e019ULL), s2) {}

    std::uint64_t next_u64() { return mix64(key_ ^ counter_++); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        // Rejection-free would bias; n is tiny compared to 2^64 in all uses,
        // so modulo bias is < 2^-40. Keep the simple form.
        return next_u64() % n;
    }

    // Standard normal via Box-Muller (polar-free, deterministic pairing).
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// k distinct indices from [0, n), ascending. Partial Fisher-Yates on an
// index array, then sorted so downstream scans are cache-friendly and
// order-independent of the draw.
std::vector<int> sample_without_replacement(Prng& rng, int n, int k);

}  // namespace renewal
