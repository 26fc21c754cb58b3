#pragma once

#include <cmath>
#include <cstdint>

#include "lrinfer/types.hpp"

namespace lrinfer {

// splitmix64 mixing step (Steele, Lea, Flood 2014). Used both as a stream
// generator and to derive independent per-replication seeds.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent seed for replication `rep` of a run seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t rep) {
  std::uint64_t s = seed;
  std::uint64_t a = splitmix64_next(s);
  s = a ^ (rep + 0x632be59bd9b4e019ULL);
  return splitmix64_next(s);
}

// Small deterministic generator. All sampling goes through this type so that
// results are bitwise reproducible for a fixed seed, independent of the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed), has_cached_(false), cached_(0.0) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; the paired draw is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Fills in column-major order (fixed traversal keeps draws reproducible).
  Matrix normal_matrix(Index rows, Index cols, double stddev = 1.0) {
    Matrix out(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) out(i, j) = stddev * normal();
    return out;
  }

 private:
  std::uint64_t state_;
  bool has_cached_;
  double cached_;
};

}  // namespace lrinfer
