#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "draco/core/error.hpp"
#include "draco/core/image.hpp"
#include "draco/core/rng.hpp"
#include "draco/io/mrc.hpp"
#include "draco/sim/cryo_sim.hpp"

namespace draco::data {

struct Triplet {
  Image original;
  Image odd;
  Image even;
  // Frames summed into each half; used to put the halves on the original's dose.
  std::size_t frames_odd = 1;
  std::size_t frames_even = 1;
};

/// Odd frames are 1, 3, 5, ... (1-based). The original is formed as odd + even
/// so the split identity holds bit-exactly in float.
inline Triplet movie_to_triplet(const sim::Movie& movie) {
  if (movie.size() < 2) throw InvalidArgument("movie_to_triplet needs M >= 2 frames, got " + std::to_string(movie.size()));
  const Image& f1 = movie.frames.front();
  Triplet t{Image(f1.height, f1.width), Image(f1.height, f1.width), Image(f1.height, f1.width), 0, 0};
  for (std::size_t i = 0; i < movie.size(); ++i) {
    require_same_shape(f1, movie.frames[i], "movie_to_triplet");
    if (i % 2 == 0) {
      t.odd += movie.frames[i];
      ++t.frames_odd;
    } else {
      t.even += movie.frames[i];
      ++t.frames_even;
    }
  }
  t.original = t.odd;
  t.original += t.even;
  return t;
}

struct NormalizeOptions {
  // Scale each half-sum by M / M_half before the shared affine map, so all
  // three images live on the same dose in normalized space.
  bool dose_equalize = true;
};

struct NormalizeStats {
  double mean = 0;
  double stddev = 1;
};

inline NormalizeStats normalization_stats(const Image& original) {
  const Moments m = moments(original);
  if (!(m.variance > 0)) throw DegenerateInput("normalize: original micrograph has zero standard deviation");
  return {m.mean, m.stddev()};
}

inline Image apply_affine(const Image& im, double gain, double mean, double stddev) {
  Image out(im.height, im.width);
  for (std::size_t i = 0; i < im.size(); ++i) {
    out.pixels[i] = static_cast<float>((gain * im.pixels[i] - mean) / stddev);
  }
  return out;
}

inline Triplet normalize_triplet(const Triplet& t, const NormalizeOptions& opt = {}) {
  require_same_shape(t.original, t.odd, "normalize_triplet");
  require_same_shape(t.original, t.even, "normalize_triplet");
  const NormalizeStats s = normalization_stats(t.original);
  const double total = static_cast<double>(t.frames_odd + t.frames_even);
  const double g_odd = opt.dose_equalize ? total / static_cast<double>(t.frames_odd) : 1.0;
  const double g_even = opt.dose_equalize ? total / static_cast<double>(t.frames_even) : 1.0;
  Triplet out = t;
  out.original = apply_affine(t.original, 1.0, s.mean, s.stddev);
  out.odd = apply_affine(t.odd, g_odd, s.mean, s.stddev);
  out.even = apply_affine(t.even, g_even, s.mean, s.stddev);
  return out;
}

struct AugmentConfig {
  std::size_t out_size = 64;
  double crop_frac_min = 1.0 / 16, crop_frac_max = 1.0 / 4;
  bool flips = true;
};

struct CropWindow {
  std::size_t y = 0, x = 0, side = 0;
  bool flip_h = false, flip_v = false;
};

/// Square crop whose area fraction of the source is uniform in the configured range.
inline CropWindow sample_crop(std::size_t height, std::size_t width, const AugmentConfig& cfg, Rng& rng) {
  if (!(cfg.crop_frac_min > 0) || cfg.crop_frac_max < cfg.crop_frac_min || cfg.crop_frac_max > 1) {
    throw InvalidArgument("crop fraction range must satisfy 0 < min <= max <= 1");
  }
  const double area = static_cast<double>(height) * static_cast<double>(width);
  const auto lo = static_cast<std::size_t>(std::ceil(std::sqrt(cfg.crop_frac_min * area) - 1e-9));
  const auto hi = std::min({static_cast<std::size_t>(std::floor(std::sqrt(cfg.crop_frac_max * area) + 1e-9)),
                            height, width});
  if (lo > hi) throw InvalidArgument("no square crop of " + std::to_string(height) + "x" + std::to_string(width) +
                                     " fits the crop fraction range");
  if (cfg.out_size < 1 || cfg.out_size > std::min(height, width)) {
    throw InvalidArgument("augment out_size " + std::to_string(cfg.out_size) + " exceeds the source size");
  }
  CropWindow w;
  const double a = uniform(rng, cfg.crop_frac_min, cfg.crop_frac_max);
  w.side = std::clamp(static_cast<std::size_t>(std::lround(std::sqrt(a * area))), lo, hi);
  w.y = static_cast<std::size_t>(rng() % (height - w.side + 1));
  w.x = static_cast<std::size_t>(rng() % (width - w.side + 1));
  if (cfg.flips) {
    w.flip_h = (rng() & 1) != 0;
    w.flip_v = (rng() & 1) != 0;
  }
  return w;
}

/// Corner-aligned bilinear resize of the crop window, then flips.
inline Image apply_crop(const Image& im, const CropWindow& w, std::size_t out_size) {
  Image out(out_size, out_size);
  const double step = out_size > 1 ? static_cast<double>(w.side - 1) / static_cast<double>(out_size - 1) : 0.0;
  for (std::size_t i = 0; i < out_size; ++i) {
    const std::size_t oi = w.flip_v ? out_size - 1 - i : i;
    for (std::size_t j = 0; j < out_size; ++j) {
      const std::size_t oj = w.flip_h ? out_size - 1 - j : j;
      out.at(oi, oj) = sample_bilinear(im, static_cast<double>(w.y) + i * step, static_cast<double>(w.x) + j * step);
    }
  }
  return out;
}

inline Triplet augment(const Triplet& t, std::uint64_t seed, const AugmentConfig& cfg = {}) {
  require_same_shape(t.original, t.odd, "augment");
  require_same_shape(t.original, t.even, "augment");
  Rng rng(seed);
  const CropWindow w = sample_crop(t.original.height, t.original.width, cfg, rng);
  Triplet out = t;
  out.original = apply_crop(t.original, w, cfg.out_size);
  out.odd = apply_crop(t.odd, w, cfg.out_size);
  out.even = apply_crop(t.even, w, cfg.out_size);
  return out;
}

struct PatchGrid {
  std::vector<float> patches;  // N x p*p, row-major
  std::size_t grid_h = 0, grid_w = 0;
  std::size_t patch_size = 0;

  std::size_t count() const noexcept { return grid_h * grid_w; }
  std::size_t dim() const noexcept { return patch_size * patch_size; }
};

inline PatchGrid patchify(const Image& im, std::size_t p) {
  if (p == 0 || im.height % p != 0 || im.width % p != 0) {
    throw ShapeError("patchify: " + shape_string(im) + " image is not divisible by patch size " + std::to_string(p));
  }
  PatchGrid g{std::vector<float>(im.size()), im.height / p, im.width / p, p};
  std::size_t k = 0;
  for (std::size_t gy = 0; gy < g.grid_h; ++gy)
    for (std::size_t gx = 0; gx < g.grid_w; ++gx)
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) g.patches[k++] = im.at(gy * p + y, gx * p + x);
  return g;
}

inline Image unpatchify(const PatchGrid& g) {
  const std::size_t p = g.patch_size;
  if (p == 0 || g.patches.size() % g.dim() != 0 || g.patches.size() / g.dim() != g.count()) {
    throw ShapeError("unpatchify: grid " + std::to_string(g.grid_h) + "x" + std::to_string(g.grid_w) +
                     " does not match " + std::to_string(p ? g.patches.size() / (p * p) : 0) + " patches");
  }
  Image im(g.grid_h * p, g.grid_w * p);
  std::size_t k = 0;
  for (std::size_t gy = 0; gy < g.grid_h; ++gy)
    for (std::size_t gx = 0; gx < g.grid_w; ++gx)
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) im.at(gy * p + y, gx * p + x) = g.patches[k++];
  return im;
}

/// Sections: original, odd, even.
inline std::vector<std::uint8_t> triplet_to_mrc(const Triplet& t, float pixel_size) {
  return io::write_mrc({t.original, t.odd, t.even}, pixel_size);
}

inline Triplet triplet_from_mrc(std::span<const std::uint8_t> bytes, std::size_t frames_odd, std::size_t frames_even) {
  auto f = io::read_mrc(bytes);
  if (f.sections.size() != 3) {
    throw InvalidArgument("triplet MRC needs 3 sections, got " + std::to_string(f.sections.size()));
  }
  return {f.sections[0], f.sections[1], f.sections[2], frames_odd, frames_even};
}

}  // namespace draco::data
