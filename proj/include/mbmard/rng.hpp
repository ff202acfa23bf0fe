#pragma once
// Deterministic random streams for reproducible chains.
//
// The engine is std::mt19937_64, whose bit output is pinned by the C++
// standard. Per-stream seeds are derived from (seed, stream) through a
// splitmix64 finalizer so chains, latents, and replicates each get an
// independent generator. The variate transforms (uniform, normal, gamma,
// beta) live here instead of <random> because the standard leaves those
// algorithms implementation-defined and traces must be bitwise reproducible
// across standard libraries. Algorithm identity: mt19937_64 engine,
// 53-bit uniforms, polar Box-Muller normals, Marsaglia-Tsang gammas.

#include <cmath>
#include <cstdint>
#include <random>

namespace mbmard {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : eng_(mix_seed(seed, stream)) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform on the open interval (0, 1); 53-bit mantissa, zero rejected so
  // log(u) is always finite.
  double uniform() {
    double u;
    do {
      u = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    } while (u == 0.0);
    return u;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Unbiased integer on {0, ..., n-1}.
  std::uint64_t integer(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x < threshold);
    return x % n;
  }

  // Standard normal via the polar (Marsaglia) form of Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  // Gamma(shape, rate) via Marsaglia-Tsang; shape < 1 boosted through the
  // Gamma(shape + 1) representation.
  double gamma(double shape, double rate) {
    if (shape < 1.0) {
      const double boost = std::pow(uniform(), 1.0 / shape);
      return gamma(shape + 1.0, rate) * boost;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a, 1.0);
    const double y = gamma(b, 1.0);
    return x / (x + y);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mbmard
