#include "scl/rng.hpp"

#include <cmath>
#include <limits>

namespace scl {

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}
}  // namespace

std::uint64_t Rng::mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::string_view tag, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = fnv1a(kFnvOffset, tag);
    h = mix(h ^ seed);
    h = mix(h ^ (a * kGolden));
    h = mix(h ^ (b * 0xd6e8feb86659fd93ULL));
    Rng r(0);
    r.key_ = h;
    r.counter_ = 0;
    return r;
}

Rng Rng::split(std::string_view tag, std::uint64_t a, std::uint64_t b) const {
    return derive(key_, tag, a, b);
}

std::uint64_t Rng::next_u64() {
    return mix(key_ + kGolden * ++counter_);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

std::uint64_t Rng::below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // 1-u maps [0,1) to (0,1], keeping log() finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double Rng::truncated_gaussian(double sigma, double cut_sigmas) {
    double z;
    do {
        z = gaussian();
    } while (std::abs(z) > cut_sigmas);
    return sigma * z;
}

}  // namespace scl
