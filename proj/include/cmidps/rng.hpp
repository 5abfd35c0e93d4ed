#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace cmidps {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_label(std::string_view s) {
    // FNV-1a, then one mixing round.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(h);
}

}  // namespace detail

/// Seeded random stream with deterministic child-stream derivation.
///
/// Every consumer of randomness takes an explicit stream. Independent
/// substreams are derived by `child(label)`, so parallel work (batch seeds,
/// Hutchinson probes) draws reproducibly regardless of execution order.
/// Normal variates use Box-Muller on the raw 64-bit output, which keeps the
/// draw sequence independent of the standard library implementation.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed)
        : key_(seed), gen_(detail::splitmix64(seed)) {}

    std::uint64_t key() const { return key_; }

    RngStream child(std::uint64_t label) const {
        return RngStream(detail::splitmix64(key_ ^ detail::splitmix64(label + 0x9e3779b97f4a7c15ULL)));
    }

    RngStream child(std::string_view label) const {
        return child(detail::hash_label(label));
    }

    RngStream child(std::string_view label, std::uint64_t index) const {
        return child(label).child(index);
    }

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n) without modulo bias.
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        // Box-Muller; u1 in (0,1] so log is finite.
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    Eigen::VectorXd normal_vec(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    /// Vector of independent +-1 entries (Hutchinson probes).
    Eigen::VectorXd rademacher_vec(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i)
            v[i] = (next_u64() & 1ULL) ? 1.0 : -1.0;
        return v;
    }

  private:
    std::uint64_t key_;
    std::mt19937_64 gen_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace cmidps
