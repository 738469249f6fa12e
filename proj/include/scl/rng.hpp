#pragma once

#include <cstdint>
#include <string_view>

namespace scl {

/// Counter-based pseudorandom generator with named, splittable streams.
///
/// Every consumer derives its stream from (seed, purpose tag, indices), so
/// parallel workers draw from disjoint streams and reruns are bit-reproducible
/// regardless of scheduling. The core is a splitmix-style hash of an
/// incrementing counter offset by the stream key.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x5ca1ab1e5e1ec7edULL)) {}

    /// Stream keyed by (seed, tag, a, b). Equal inputs give equal streams.
    static Rng derive(std::uint64_t seed, std::string_view tag,
                      std::uint64_t a = 0, std::uint64_t b = 0);

    /// Child stream keyed off this stream's key (does not consume draws).
    Rng split(std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0) const;

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();

    /// Uniform in [lo, hi). Tolerates lo > hi (same distribution, reversed).
    double uniform(double lo, double hi);

    /// Unbiased uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller (second sample cached).
    double gaussian();

    /// N(0, sigma^2) rejection-sampled until |x| <= cut_sigmas * sigma.
    double truncated_gaussian(double sigma, double cut_sigmas);

private:
    static std::uint64_t mix(std::uint64_t z);

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace scl
