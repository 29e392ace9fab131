#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace draco {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(seed ^ mix_seed(stream + 0x632BE59BD9B4E019ull));
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

/// Poisson variate. Inversion for means up to 1000 (split into chunks small
/// enough that exp(-mean) stays representable), normal approximation above.
inline double poisson(Rng& rng, double mean) {
  if (mean <= 0.0) return 0.0;
  if (mean > 1000.0) {
    const double v = std::round(mean + std::sqrt(mean) * normal(rng));
    return v < 0.0 ? 0.0 : v;
  }
  constexpr double kChunk = 64.0;
  double total = 0.0;
  while (mean > 0.0) {
    const double m = mean > kChunk ? kChunk : mean;
    mean -= m;
    double p = std::exp(-m);
    double cdf = p;
    const double u = uniform01(rng);
    double k = 0.0;
    while (u > cdf) {
      k += 1.0;
      p *= m / k;
      cdf += p;
      if (p < 1e-300 && k > m) break;
    }
    total += k;
  }
  return total;
}

inline std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng deserialize_rng(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  return rng;
}

}  // namespace draco
