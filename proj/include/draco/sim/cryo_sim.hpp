#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "draco/core/error.hpp"
#include "draco/core/fft.hpp"
#include "draco/core/image.hpp"
#include "draco/core/rng.hpp"

namespace draco::sim {

/// Expected electron counts per pixel per frame, before the dose factor.
struct CleanSignal {
  Image image;
  float pixel_size = 1.0f;
};

struct Blob {
  double y = 0, x = 0;
  double sigma = 1;
  double amplitude = 0;
};

struct PhantomConfig {
  std::size_t size = 256;
  std::size_t n_blobs = 30;
  double blob_sigma_min = 2.0, blob_sigma_max = 6.0;
  double amplitude_min = 0.3, amplitude_max = 1.0;
  double background = 1.0;
  float pixel_size = 1.0f;
};

/// A phantom keeps its blob list so that annotations and defects can be
/// derived from ground truth.
struct Phantom {
  CleanSignal signal;
  std::vector<Blob> blobs;
  double background = 0;
};

struct Shift {
  int dx = 0, dy = 0;
  friend bool operator==(const Shift&, const Shift&) = default;
};

struct Movie {
  std::vector<Image> frames;
  std::vector<Shift> drift_per_frame;
  double dose_per_frame = 0;
  double gaussian_sigma = 0;

  std::size_t size() const noexcept { return frames.size(); }
};

enum class DefectKind { clean, ice_blob, empty, drift_blur };

struct DefectLabel {
  DefectKind kind = DefectKind::clean;
  bool is_accept = true;
};

inline std::string_view to_string(DefectKind k) {
  switch (k) {
    case DefectKind::clean: return "clean";
    case DefectKind::ice_blob: return "ice_blob";
    case DefectKind::empty: return "empty";
    case DefectKind::drift_blur: return "drift_blur";
  }
  return "?";
}

inline DefectKind parse_defect_kind(std::string_view s) {
  for (auto k : {DefectKind::clean, DefectKind::ice_blob, DefectKind::empty, DefectKind::drift_blur}) {
    if (to_string(k) == s) return k;
  }
  throw InvalidArgument("unknown defect kind '" + std::string(s) + "'");
}

inline void add_blob(Image& im, const Blob& b) {
  const double reach = 4.0 * b.sigma;
  const auto y0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(b.y - reach)));
  const auto y1 = static_cast<std::ptrdiff_t>(std::min<double>(im.height - 1, std::ceil(b.y + reach)));
  const auto x0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(b.x - reach)));
  const auto x1 = static_cast<std::ptrdiff_t>(std::min<double>(im.width - 1, std::ceil(b.x + reach)));
  const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
  for (auto y = y0; y <= y1; ++y) {
    for (auto x = x0; x <= x1; ++x) {
      const double dy = y - b.y, dx = x - b.x;
      im.at(y, x) += static_cast<float>(b.amplitude * std::exp(-(dy * dy + dx * dx) * inv));
    }
  }
}

inline Phantom render_phantom(std::size_t height, std::size_t width, std::vector<Blob> blobs, double background,
                              float pixel_size = 1.0f) {
  if (background < 0) throw InvalidArgument("phantom background must be >= 0");
  Phantom p;
  p.signal.image = Image(height, width, static_cast<float>(background));
  p.signal.pixel_size = pixel_size;
  for (const auto& b : blobs) {
    if (!(b.sigma > 0) || b.amplitude < 0) throw InvalidArgument("blob needs sigma > 0 and amplitude >= 0");
    add_blob(p.signal.image, b);
  }
  p.blobs = std::move(blobs);
  p.background = background;
  return p;
}

inline Phantom make_phantom(std::uint64_t seed, const PhantomConfig& cfg) {
  if (cfg.size < 32) throw InvalidArgument("phantom size must be >= 32");
  if (!(cfg.blob_sigma_min > 0) || cfg.blob_sigma_max < cfg.blob_sigma_min) {
    throw InvalidArgument("blob radius range must satisfy 0 < min <= max");
  }
  if (cfg.amplitude_min < 0 || cfg.amplitude_max < cfg.amplitude_min) {
    throw InvalidArgument("amplitude range must satisfy 0 <= min <= max");
  }
  if (cfg.background < 0) throw InvalidArgument("phantom background must be >= 0");
  Rng rng(seed);
  std::vector<Blob> blobs;
  blobs.reserve(cfg.n_blobs);
  const double n = static_cast<double>(cfg.size);
  for (std::size_t i = 0; i < cfg.n_blobs; ++i) {
    Blob b;
    b.sigma = uniform(rng, cfg.blob_sigma_min, cfg.blob_sigma_max);
    const double margin = std::min(2.0 * b.sigma, n / 4);
    b.y = uniform(rng, margin, n - 1 - margin);
    b.x = uniform(rng, margin, n - 1 - margin);
    b.amplitude = uniform(rng, cfg.amplitude_min, cfg.amplitude_max);
    blobs.push_back(b);
  }
  return render_phantom(cfg.size, cfg.size, std::move(blobs), cfg.background, cfg.pixel_size);
}

/// Normalized samples of exp(-t^2 / 2 sigma^2) for t in [-r, r], r = ceil(4 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double s = 0;
  for (std::ptrdiff_t t = -r; t <= r; ++t) {
    const double v = std::exp(-static_cast<double>(t * t) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(t + r)] = v;
    s += v;
  }
  for (double& v : k) v /= s;
  return k;
}

namespace detail {

// Separable pass along one axis with symmetric (edge-repeating) reflection.
inline Image convolve_axis(const Image& in, const std::vector<double>& k, bool along_x) {
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  Image out(in.height, in.width);
  const auto h = static_cast<std::ptrdiff_t>(in.height), w = static_cast<std::ptrdiff_t>(in.width);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double acc = 0;
      for (std::ptrdiff_t t = -r; t <= r; ++t) {
        const double kv = k[static_cast<std::size_t>(t + r)];
        acc += along_x ? kv * in.at(y, reflect_index(x + t, w)) : kv * in.at(reflect_index(y + t, h), x);
      }
      out.at(y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace detail

inline CleanSignal apply_psf(const CleanSignal& signal, double psf_sigma) {
  if (!(psf_sigma >= 0)) throw InvalidArgument("psf_sigma must be >= 0");
  if (psf_sigma == 0) return signal;
  const auto k = gaussian_kernel(psf_sigma);
  CleanSignal out = signal;
  out.image = detail::convolve_axis(detail::convolve_axis(signal.image, k, true), k, false);
  return out;
}

/// out(y, x) = in(y - dy, x - dx) with wrap-around, so content moves by (dx, dy).
inline Image circular_shift(const Image& in, Shift s) {
  Image out(in.height, in.width);
  const auto h = static_cast<std::ptrdiff_t>(in.height), w = static_cast<std::ptrdiff_t>(in.width);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    const std::ptrdiff_t sy = ((y - s.dy) % h + h) % h;
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      out.at(y, x) = in.at(sy, ((x - s.dx) % w + w) % w);
    }
  }
  return out;
}

inline Movie render_movie(const CleanSignal& clean, std::size_t frames, double dose, double gauss_sigma,
                          int max_drift, std::uint64_t seed) {
  if (frames < 2) throw InvalidArgument("a movie needs M >= 2 frames for the odd/even split");
  if (!(dose > 0)) throw InvalidArgument("dose per frame must be > 0");
  if (!(gauss_sigma >= 0)) throw InvalidArgument("gaussian sigma must be >= 0");
  if (max_drift < 0) throw InvalidArgument("max drift must be >= 0");
  for (float v : clean.image.pixels) {
    if (!(v >= 0) || !std::isfinite(v)) throw InvalidArgument("clean signal must be finite and non-negative");
  }

  Movie mv;
  mv.dose_per_frame = dose;
  mv.gaussian_sigma = gauss_sigma;
  Rng walk(derive_seed(seed, 0));
  Shift d{};
  for (std::size_t i = 0; i < frames; ++i) {
    if (i > 0 && max_drift > 0) {
      d.dx = std::clamp(d.dx + static_cast<int>(walk() % 3) - 1, -max_drift, max_drift);
      d.dy = std::clamp(d.dy + static_cast<int>(walk() % 3) - 1, -max_drift, max_drift);
    }
    mv.drift_per_frame.push_back(d);
  }
  mv.frames.reserve(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    Rng rng(derive_seed(seed, i + 1));
    Image f = circular_shift(clean.image, mv.drift_per_frame[i]);
    for (float& v : f.pixels) {
      double c = poisson(rng, dose * v);
      if (gauss_sigma > 0) c += gauss_sigma * normal(rng);
      v = static_cast<float>(c);
    }
    mv.frames.push_back(std::move(f));
  }
  return mv;
}

/// Integer shift s such that `moving` ≈ circular_shift(reference, s), from the
/// peak of the FFT cross-power spectrum divided by |c|^whitening. whitening = 1
/// is classic phase correlation; it hands the signal-free high frequencies the
/// same weight as the rest, so at shot-noise-limited dose the default is 0
/// (plain cross-correlation).
inline Shift estimate_shift(const fft::Spectrum& reference, const Image& moving, double whitening = 0.0) {
  const Moments m = moments(moving);
  if (m.variance <= 0) throw DegenerateInput("alignment undefined: frame is constant");
  Image centred = moving;
  for (float& v : centred.pixels) v = static_cast<float>(v - m.mean);
  fft::Spectrum cross = fft::forward(centred);
  for (std::size_t i = 0; i < cross.values.size(); ++i) {
    const auto c = cross.values[i] * std::conj(reference.values[i]);
    const double a = std::abs(c);
    cross.values[i] = whitening == 0 ? c : (a > 1e-12 ? c / std::pow(a, whitening) : fft::cplx(0, 0));
  }
  fft::transform2d(cross, true);
  std::size_t best = 0;
  for (std::size_t i = 1; i < cross.values.size(); ++i) {
    if (cross.values[i].real() > cross.values[best].real()) best = i;
  }
  const auto h = static_cast<int>(cross.height), w = static_cast<int>(cross.width);
  int sy = static_cast<int>(best / cross.width), sx = static_cast<int>(best % cross.width);
  if (sy > h / 2) sy -= h;
  if (sx > w / 2) sx -= w;
  return {sx, sy};
}

/// Shifts of every frame relative to frame 1 (the first entry is always zero).
inline std::vector<Shift> estimate_drift(const Movie& movie) {
  if (movie.size() < 2) throw InvalidArgument("alignment needs M >= 2 frames");
  const Image& ref = movie.frames.front();
  const Moments m = moments(ref);
  if (m.variance <= 0) throw DegenerateInput("alignment undefined: frame 1 is constant");
  Image centred = ref;
  for (float& v : centred.pixels) v = static_cast<float>(v - m.mean);
  const fft::Spectrum ref_spec = fft::forward(centred);
  std::vector<Shift> shifts{Shift{}};
  for (std::size_t i = 1; i < movie.size(); ++i) {
    require_same_shape(ref, movie.frames[i], "align_frames");
    shifts.push_back(estimate_shift(ref_spec, movie.frames[i]));
  }
  return shifts;
}

/// Registers every frame onto frame 1. The recorded drift becomes the
/// residual relative to frame 1, which is zero when estimation is exact.
inline Movie align_frames(const Movie& movie) {
  const auto est = estimate_drift(movie);
  Movie out = movie;
  const Shift base = movie.drift_per_frame.empty() ? Shift{} : movie.drift_per_frame.front();
  for (std::size_t i = 0; i < movie.size(); ++i) {
    if (est[i] != Shift{}) out.frames[i] = circular_shift(movie.frames[i], {-est[i].dx, -est[i].dy});
    if (i < movie.drift_per_frame.size()) {
      const Shift truth = movie.drift_per_frame[i];
      out.drift_per_frame[i] = {truth.dx - base.dx - est[i].dx, truth.dy - base.dy - est[i].dy};
    }
  }
  return out;
}

struct DefectedSignal {
  CleanSignal signal;
  DefectLabel label;
};

/// Defects act on the projected density, before the PSF.
inline DefectedSignal inject_defect(const Phantom& phantom, DefectKind kind, std::uint64_t seed) {
  DefectedSignal out{phantom.signal, {kind, kind == DefectKind::clean}};
  Image& im = out.signal.image;
  Rng rng(seed);
  switch (kind) {
    case DefectKind::clean:
      break;
    case DefectKind::empty:
      std::fill(im.pixels.begin(), im.pixels.end(), static_cast<float>(phantom.background));
      break;
    case DefectKind::ice_blob: {
      const float level = 6.0f * std::max(min_max(im).second, 1e-3f);
      const int count = 2 + static_cast<int>(rng() % 3);
      for (int c = 0; c < count; ++c) {
        const double r = uniform(rng, 4.0, 10.0);
        const double cy = uniform(rng, 0, static_cast<double>(im.height));
        const double cx = uniform(rng, 0, static_cast<double>(im.width));
        for (std::size_t y = 0; y < im.height; ++y) {
          for (std::size_t x = 0; x < im.width; ++x) {
            const double dy = y - cy, dx = x - cx;
            if (dy * dy + dx * dx <= r * r) im.at(y, x) = std::max(im.at(y, x), level);
          }
        }
      }
      break;
    }
    case DefectKind::drift_blur: {
      const double angle = uniform(rng, 0, 3.14159265358979323846);
      const int length = 9 + static_cast<int>(rng() % 7);
      const double uy = std::sin(angle), ux = std::cos(angle);
      const Image src = im;
      for (std::size_t y = 0; y < im.height; ++y) {
        for (std::size_t x = 0; x < im.width; ++x) {
          double acc = 0;
          for (int t = 0; t < length; ++t) {
            const double o = t - (length - 1) / 2.0;
            const double py = static_cast<double>(y) + o * uy, px = static_cast<double>(x) + o * ux;
            const auto ry = reflect_index(static_cast<std::ptrdiff_t>(std::lround(py)), src.height);
            const auto rx = reflect_index(static_cast<std::ptrdiff_t>(std::lround(px)), src.width);
            acc += src.at(ry, rx);
          }
          im.at(y, x) = static_cast<float>(acc / length);
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace draco::sim
