#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include <Eigen/Core>

namespace pcdiff {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic splittable random stream: xoshiro256++ core, Box-Muller
/// normals. All randomness in the library flows through explicitly seeded
/// instances; there is no global generator. Results are identical across
/// platforms because no <random> distributions are used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
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

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), n >= 1.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    // u1 in (0, 1] keeps the log finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  /// Independent child stream determined by (current state, salt). Does not
  /// advance this stream, so forks keyed by stable ids (step, item, ...)
  /// are reproducible regardless of evaluation order.
  Rng fork(std::uint64_t salt) const {
    std::uint64_t sm = salt ^ 0xa0761d6478bd642full;
    for (const auto word : state_) {
      sm ^= word;
      splitmix64(sm);
    }
    return Rng(splitmix64(sm));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// n x 3 matrix of independent standard normals (row-major fill order).
inline Eigen::Matrix<double, Eigen::Dynamic, 3> standard_normal_rows(
    Eigen::Index n, Rng& rng) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> out(n, 3);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) out(i, j) = rng.normal();
  return out;
}

/// Stable 64-bit mix of two ids, used to key forked streams.
inline std::uint64_t mix_ids(std::uint64_t a, std::uint64_t b) {
  std::uint64_t sm = a * 0x9e3779b97f4a7c15ull + b;
  return splitmix64(sm);
}

}  // namespace pcdiff
