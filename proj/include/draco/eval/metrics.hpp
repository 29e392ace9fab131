#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "draco/core/error.hpp"
#include "draco/core/fft.hpp"
#include "draco/core/image.hpp"
#include "draco/io/region_pairs.hpp"

namespace draco::eval {

struct RegionStats {
  double mean = 0;
  double variance = 0;  // population
};

inline RegionStats region_stats(const Image& im, const io::Rect& r) {
  double s = 0, ss = 0;
  for (std::size_t y = r.y; y < r.y + r.h; ++y)
    for (std::size_t x = r.x; x < r.x + r.w; ++x) s += im.at(y, x);
  const double n = static_cast<double>(r.w * r.h);
  const double mean = s / n;
  for (std::size_t y = r.y; y < r.y + r.h; ++y)
    for (std::size_t x = r.x; x < r.x + r.w; ++x) ss += (im.at(y, x) - mean) * (im.at(y, x) - mean);
  return {mean, ss / n};
}

struct SnrResult {
  double db = 0;
  std::vector<double> per_pair;
  std::size_t zero_contrast = 0;  // pairs scoring -inf
};

/// Mean over pairs of 10 log10((mean_s - mean_b)^2 / var_b).
inline SnrResult snr_detail(const Image& im, const std::vector<io::RegionPair>& pairs) {
  if (pairs.empty()) throw InvalidArgument("snr_db: no region pairs");
  io::validate_region_pairs(pairs, im);
  SnrResult r;
  double sum = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto s = region_stats(im, pairs[i].signal);
    const auto b = region_stats(im, pairs[i].background);
    if (!(b.variance > 0)) throw DegenerateInput("snr_db: region pair " + std::to_string(i + 1) + " has zero background variance");
    const double c = s.mean - b.mean;
    double db;
    if (c == 0) {
      db = -std::numeric_limits<double>::infinity();
      ++r.zero_contrast;
    } else {
      db = 10 * std::log10(c * c / b.variance);
    }
    r.per_pair.push_back(db);
    sum += db;
  }
  r.db = sum / static_cast<double>(pairs.size());
  return r;
}

inline double snr_db(const Image& im, const std::vector<io::RegionPair>& pairs) { return snr_detail(im, pairs).db; }

/// Radial low-pass: unit gain up to cutoff (fraction of Nyquist), raised-cosine
/// roll-off to zero over the next 0.05 of Nyquist. A cutoff of 1 keeps every bin.
inline Image lowpass_filter(const Image& im, double cutoff) {
  if (!(cutoff > 0 && cutoff <= 1)) throw InvalidArgument("lowpass cutoff must lie in (0, 1]");
  if (im.empty()) throw InvalidArgument("lowpass: empty image");
  if (cutoff == 1) return im;
  constexpr double edge = 0.05;
  auto s = fft::forward(im);
  for (std::size_t y = 0; y < s.height; ++y) {
    const double fy = fft::frequency(y, s.height) / 0.5;
    for (std::size_t x = 0; x < s.width; ++x) {
      const double fx = fft::frequency(x, s.width) / 0.5;
      const double r = std::sqrt(fx * fx + fy * fy);
      double g = 1;
      if (r > cutoff + edge) g = 0;
      else if (r > cutoff) g = 0.5 * (1 + std::cos(std::numbers::pi * (r - cutoff) / edge));
      s.at(y, x) *= g;
    }
  }
  return fft::inverse_real(std::move(s));
}

/// 10 log10(range^2 / MSE) with the dynamic range taken from the clean image.
inline double psnr(const Image& denoised, const Image& clean) {
  require_same_shape(denoised, clean, "psnr");
  const auto [lo, hi] = min_max(clean);
  if (!(hi > lo)) throw DegenerateInput("psnr: clean reference is constant");
  const double e = mse(denoised, clean);
  if (e == 0) return std::numeric_limits<double>::infinity();
  const double range = static_cast<double>(hi) - lo;
  return 10 * std::log10(range * range / e);
}

}  // namespace draco::eval
