#pragma once

#include <cstdint>
#include <cstdio>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace snet {

// Exit-code categories used by the CLI; library code throws these directly.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

std::string sformat(const char* fmt, ...);

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s);

constexpr double kSoundSpeed = 343.0;  // m/s

// ---------------------------------------------------------------------------
// Deterministic, platform-independent RNG. std::mt19937 with the stdlib
// distributions is implementation-defined, so uniform/normal are derived
// from raw 64-bit output directly.

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : seed_(seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl_(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl_(s_[3], 45);
        return result;
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    int64_t uniform_int(int64_t n) {  // [0, n)
        return n > 0 ? static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)) : 0;
    }

    // Independent stream derived from the original seed and a tag; derivation
    // does not consume state, so streams are stable no matter the draw order.
    Rng child(const std::string& tag) const {
        uint64_t s = seed_ ^ fnv1a64(tag);
        return Rng(splitmix64(s));
    }
    Rng child(const std::string& tag, uint64_t index) const {
        uint64_t s = seed_ ^ fnv1a64(tag) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
        return Rng(splitmix64(s));
    }

    uint64_t seed() const { return seed_; }

  private:
    static uint64_t rotl_(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t seed_;
    uint64_t s_[4];
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace snet
