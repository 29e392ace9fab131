#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "draco/core/image.hpp"

namespace draco::fft {

using cplx = std::complex<double>;

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline void radix2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const cplx wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline void naive_dft(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  std::vector<cplx> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    cplx s(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      s += a[t] * cplx(std::cos(ang), std::sin(ang));
    }
    out[k] = s;
  }
  a.swap(out);
}

}  // namespace detail

/// Unnormalized 1D transform; the inverse is scaled by 1/n.
inline void transform(std::vector<cplx>& a, bool inverse) {
  if (detail::is_pow2(a.size())) {
    detail::radix2(a, inverse);
  } else {
    detail::naive_dft(a, inverse);
  }
  if (inverse) {
    const double s = 1.0 / static_cast<double>(a.size());
    for (auto& v : a) v *= s;
  }
}

/// Row-major 2D complex grid.
struct Spectrum {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<cplx> values;
  cplx& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  const cplx& at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

inline void transform2d(Spectrum& s, bool inverse) {
  std::vector<cplx> line(s.width);
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) line[x] = s.at(y, x);
    transform(line, inverse);
    for (std::size_t x = 0; x < s.width; ++x) s.at(y, x) = line[x];
  }
  line.resize(s.height);
  for (std::size_t x = 0; x < s.width; ++x) {
    for (std::size_t y = 0; y < s.height; ++y) line[y] = s.at(y, x);
    transform(line, inverse);
    for (std::size_t y = 0; y < s.height; ++y) s.at(y, x) = line[y];
  }
}

inline Spectrum forward(const Image& im) {
  Spectrum s{im.height, im.width, std::vector<cplx>(im.size())};
  for (std::size_t i = 0; i < im.size(); ++i) s.values[i] = cplx(im.pixels[i], 0.0);
  transform2d(s, false);
  return s;
}

inline Image inverse_real(Spectrum s) {
  transform2d(s, true);
  Image im(s.height, s.width);
  for (std::size_t i = 0; i < im.size(); ++i) im.pixels[i] = static_cast<float>(s.values[i].real());
  return im;
}

/// Signed frequency in cycles per sample for DFT bin k of an n-point transform.
inline double frequency(std::size_t k, std::size_t n) {
  const auto kk = static_cast<double>(k);
  const auto nn = static_cast<double>(n);
  return (k <= n / 2 ? kk : kk - nn) / nn;
}

}  // namespace draco::fft
