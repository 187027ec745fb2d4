#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sfml {

/// SplitMix64 mixing step; used to turn (root seed, stream index) pairs into
/// well-separated engine seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic random stream. All variate transforms are implemented here
/// (not via std:: distributions) so that a given seed yields the same draw
/// sequence on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

  /// Substream `index` of a root seed. Parallel work (ensemble members,
  /// dataset records, epochs) uses one substream per unit of work, which makes
  /// results independent of scheduling.
  static Rng stream(std::uint64_t root, std::uint64_t index) {
    return Rng(splitmix64(root ^ (0x9e3779b97f4a7c15ULL * (index + 1))));
  }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  /// Uniform on [lo, hi); returns lo exactly for a zero-width interval.
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (cosine branch only; two uniforms per
  /// draw, no cached state).
  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Exp(1) variate.
  double exponential() { return -std::log1p(-uniform01()); }

  /// Uniform integer on {lo, ..., hi} inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const double u = uniform01();
    const auto span = static_cast<double>(hi - lo + 1);
    auto k = static_cast<std::int64_t>(u * span);
    if (k > hi - lo) k = hi - lo;
    return lo + k;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace sfml
