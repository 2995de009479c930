#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace eflow {

// Error surface: shape/usage bugs, bad configs, and non-finite numerics are
// distinct failure classes so the CLI can map them to exit codes.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericsError : std::runtime_error {
    explicit NumericsError(const std::string& m) : std::runtime_error(m) {}
};

// splitmix64, used to derive independent named substreams from one seed.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(mix64(seed ^ mix64(a)) ^ mix64(b ^ 0x5851f42d4c957f2dull));
}

// Deterministic RNG with portable uniform/normal draws (no reliance on
// libstdc++ distribution internals, so streams are stable across stdlibs).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x853c49e6748fea9bull) {}

    std::uint64_t next_u64() {
        // xorshift64* keeps the generator self-contained and reproducible.
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dull;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, spare discarded: every call consumes exactly two uniforms.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        return n ? next_u64() % n : 0;
    }

  private:
    std::uint64_t state_;
};

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t idx = 0) {
    return Rng(substream(seed, stream, idx));
}

// Named stream ids so call sites stay greppable.
namespace streams {
inline constexpr std::uint64_t kInit = 0x696e6974;       // parameter init
inline constexpr std::uint64_t kData = 0x64617461;       // dataset draws
inline constexpr std::uint64_t kTimes = 0x74696d65;      // t/s/l sampling
inline constexpr std::uint64_t kDrop = 0x64726f70;       // drop plans
inline constexpr std::uint64_t kNoise = 0x6e6f6973;      // flow noise x1
inline constexpr std::uint64_t kGuide = 0x67756964;      // guidance scale + p_drop
inline constexpr std::uint64_t kSample = 0x73616d70;     // inference noise
}  // namespace streams

}  // namespace eflow
