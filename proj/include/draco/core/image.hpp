#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "draco/core/error.hpp"

namespace draco {

/// Dense 2D single-precision image, row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}
  Image(std::size_t h, std::size_t w, std::vector<float> px) : height(h), width(w), pixels(std::move(px)) {
    if (pixels.size() != h * w) {
      throw ShapeError("image buffer holds " + std::to_string(pixels.size()) + " values, expected " +
                       std::to_string(h) + "x" + std::to_string(w));
    }
  }

  std::size_t size() const noexcept { return pixels.size(); }
  bool empty() const noexcept { return pixels.empty(); }
  bool same_shape(const Image& o) const noexcept { return height == o.height && width == o.width; }

  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }

  std::span<float> row(std::size_t y) { return {pixels.data() + y * width, width}; }
  std::span<const float> row(std::size_t y) const { return {pixels.data() + y * width, width}; }

  friend bool operator==(const Image&, const Image&) = default;
};

inline std::string shape_string(const Image& im) {
  return std::to_string(im.height) + "x" + std::to_string(im.width);
}

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shapes " + shape_string(a) + " and " + shape_string(b) + " differ");
  }
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
  double stddev() const { return std::sqrt(variance); }
};

/// Population mean and variance, accumulated in double.
inline Moments moments(std::span<const float> v) {
  Moments m;
  if (v.empty()) return m;
  double s = 0.0;
  for (float x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (float x : v) {
    const double d = x - m.mean;
    ss += d * d;
  }
  m.variance = ss / static_cast<double>(v.size());
  return m;
}

inline Moments moments(const Image& im) { return moments(std::span<const float>(im.pixels)); }

inline double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    s += d * d;
  }
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

inline Image& operator+=(Image& a, const Image& b) {
  require_same_shape(a, b, "image add");
  for (std::size_t i = 0; i < a.size(); ++i) a.pixels[i] += b.pixels[i];
  return a;
}

inline Image scaled(Image im, float c) {
  for (float& v : im.pixels) v *= c;
  return im;
}

inline std::pair<float, float> min_max(const Image& im) {
  auto [lo, hi] = std::minmax_element(im.pixels.begin(), im.pixels.end());
  return {*lo, *hi};
}

/// Mirror-reflect an index into [0, n) ("symmetric" padding: -1 -> 0, n -> n-1).
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

/// Sample the image at fractional coordinates with bilinear interpolation,
/// clamping to the border.
inline float sample_bilinear(const Image& im, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(im.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(im.width - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, im.height - 1);
  const std::size_t x1 = std::min(x0 + 1, im.width - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = im.at(y0, x0) * (1.0 - fx) + im.at(y0, x1) * fx;
  const double bot = im.at(y1, x0) * (1.0 - fx) + im.at(y1, x1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

inline Image crop(const Image& im, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > im.height || x0 + w > im.width) throw ShapeError("crop window exceeds image bounds");
  Image out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(im.pixels.begin() + static_cast<std::ptrdiff_t>((y0 + y) * im.width + x0), w, out.row(y).begin());
  }
  return out;
}

}  // namespace draco
