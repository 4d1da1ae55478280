#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace clipfit {

// Deterministic PRNG with identical output on every platform. The standard
// <random> distributions are implementation-defined, so datasets and model
// init hand-roll the two draws they need (uniform and Box-Muller normal) on
// top of xoshiro256++ seeded through SplitMix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1): top 53 bits scaled by 2^-53.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]: never zero, safe under log().
  double uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Uniform integer in [0, n), n >= 1. Fixed-point multiply keeps the draw
  // branch-free and portable (slight bias ~n/2^64 is irrelevant here).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller. Consumes two draws per call; the spare
  // cosine partner is kept so consecutive calls use both.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  void fill_normal(double* out, std::size_t n, double mean, double stddev) {
    for (std::size_t i = 0; i < n; ++i) out[i] = mean + stddev * normal();
  }

  // Fisher-Yates in-place shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // Child stream for a named substream (per-class generators, shot sampling).
  // Children with different salts are decorrelated from the parent and from
  // each other, and do not consume parent state.
  Rng derive(std::uint64_t salt) const {
    std::uint64_t x = state_[0] ^ (salt * 0x9E3779B97F4A7C15ULL) ^ seed_tag_;
    return Rng(splitmix64(x));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4] = {};
  std::uint64_t seed_tag_ = 0x636C697066697421ULL;  // constant stream domain tag
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace clipfit
