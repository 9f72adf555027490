#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace plforge {

// Salts for deriving independent sub-streams from the single run seed.
inline constexpr std::uint64_t kSaltSynthSource = 0x5359525300000001ull;
inline constexpr std::uint64_t kSaltSynthTarget = 0x5359525300000002ull;
inline constexpr std::uint64_t kSaltLabelNoise = 0x5359525300000003ull;
inline constexpr std::uint64_t kSaltSourceInit = 0x5452494e00000001ull;
inline constexpr std::uint64_t kSaltSourceShuffle = 0x5452494e00000002ull;
inline constexpr std::uint64_t kSaltAdaptShuffle = 0x5452494e00000003ull;
inline constexpr std::uint64_t kSaltViewNoise = 0x5452494e00000004ull;

/// splitmix64 finalizer; derives a sub-seed from (seed, salt).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + salt + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Seeded generator with an explicit Box-Muller gaussian so the byte
/// stream does not depend on the standard library's distribution
/// implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() {
    // 53 random bits in [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // rejection sampling, unbiased
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
    std::uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

  std::mt19937_64 &engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace plforge
