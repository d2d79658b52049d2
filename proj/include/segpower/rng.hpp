#pragma once

// Counter-derived random streams. Every (seed, stream) pair maps to its own
// generator, so replicate r draws the same numbers whichever worker runs it.

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <cstdint>
#include <random>

namespace segpower {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed;
    const std::uint64_t a = splitmix64(s);
    std::uint64_t t = a ^ (stream * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
    splitmix64(t);
    return splitmix64(t);
}

class Stream {
public:
    Stream(std::uint64_t seed, std::uint64_t stream) : engine_(stream_seed(seed, stream)) {}

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform() {
        const std::uint64_t bits = engine_() >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    /// Standard Normal by inversion; portable across standard libraries.
    double normal() { return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * uniform()); }

    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace segpower
