#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "draco/core/rng.hpp"
#include "draco/data/triplet.hpp"
#include "draco/io/region_pairs.hpp"
#include "draco/sim/cryo_sim.hpp"

namespace draco::eval {

/// Imaging conditions shared by the synthetic training and test sets.
struct SimConfig {
  sim::PhantomConfig phantom;
  double psf_sigma = 1.0;
  std::size_t frames = 16;
  double dose = 0.5;  // expected counts per pixel per frame at unit signal
  double gaussian_sigma = 0.5;
  int max_drift = 0;
  bool align = true;
  bool keep_movie = false;
};

struct SyntheticMicrograph {
  data::Triplet triplet;
  Image expected;  // noise-free frame sum
  std::vector<io::RegionPair> pairs;
  sim::DefectLabel label;
  sim::Movie movie;  // aligned frames, kept only on request
};

/// Square signal boxes on blob centres, each paired with the nearest box of the
/// same size where the clean image sits at background level.
inline std::vector<io::RegionPair> blob_region_pairs(const sim::Phantom& ph, const Image& clean,
                                                     std::size_t max_pairs, double flat_tol = 0.02,
                                                     double min_contrast = 0.1) {
  std::vector<io::RegionPair> pairs;
  const std::size_t H = clean.height, W = clean.width;
  const double bg = ph.background;
  auto mean_over = [&](const io::Rect& r, double& dev) {
    double s = 0;
    dev = 0;
    for (std::size_t y = r.y; y < r.y + r.h; ++y)
      for (std::size_t x = r.x; x < r.x + r.w; ++x) {
        s += clean.at(y, x);
        dev = std::max(dev, std::abs(clean.at(y, x) - bg));
      }
    return s / static_cast<double>(r.w * r.h);
  };
  auto fits = [&](long y, long x, long side) { return y >= 0 && x >= 0 && y + side <= long(H) && x + side <= long(W); };
  for (const auto& b : ph.blobs) {
    if (pairs.size() == max_pairs) break;
    const long side = std::max(3L, std::lround(1.2 * b.sigma));
    const long sy = std::lround(b.y) - side / 2, sx = std::lround(b.x) - side / 2;
    if (!fits(sy, sx, side)) continue;
    io::Rect sig{std::size_t(sx), std::size_t(sy), std::size_t(side), std::size_t(side)};
    double dev;
    if (mean_over(sig, dev) - bg < min_contrast * bg) continue;
    bool found = false;
    for (long d = side; d <= 48 && !found; ++d) {
      for (int k = 0; k < 8 && !found; ++k) {
        const double a = k * 3.14159265358979 / 4;
        const long by = sy + std::lround(d * std::sin(a)), bx = sx + std::lround(d * std::cos(a));
        if (!fits(by, bx, side)) continue;
        io::Rect bgr{std::size_t(bx), std::size_t(by), std::size_t(side), std::size_t(side)};
        if (io::overlaps(sig, bgr)) continue;
        mean_over(bgr, dev);
        if (dev <= flat_tol * bg) {
          pairs.push_back({sig, bgr});
          found = true;
        }
      }
    }
  }
  return pairs;
}

inline SyntheticMicrograph simulate_micrograph(const sim::Phantom& ph, const sim::CleanSignal& density,
                                               const SimConfig& cfg, std::uint64_t seed, std::size_t max_pairs) {
  SyntheticMicrograph m;
  const auto blurred = sim::apply_psf(density, cfg.psf_sigma);
  auto movie = sim::render_movie(blurred, cfg.frames, cfg.dose, cfg.gaussian_sigma, cfg.max_drift, seed);
  if (cfg.align && cfg.max_drift > 0) movie = sim::align_frames(movie);
  m.triplet = data::movie_to_triplet(movie);
  if (cfg.keep_movie) m.movie = std::move(movie);
  m.expected = scaled(blurred.image, static_cast<float>(cfg.dose * static_cast<double>(cfg.frames)));
  if (max_pairs > 0) m.pairs = blob_region_pairs(ph, blurred.image, max_pairs);
  return m;
}

/// Training triplets, one phantom per item.
inline std::vector<data::Triplet> training_triplets(std::size_t n, std::uint64_t seed, const SimConfig& cfg) {
  std::vector<data::Triplet> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ph = sim::make_phantom(derive_seed(seed, 2 * i), cfg.phantom);
    out.push_back(simulate_micrograph(ph, ph.signal, cfg, derive_seed(seed, 2 * i + 1), 0).triplet);
  }
  return out;
}

/// Held-out micrographs with region-pair annotations and clean references.
inline std::vector<SyntheticMicrograph> test_micrographs(std::size_t n, std::uint64_t seed, const SimConfig& cfg,
                                                         std::size_t max_pairs = 20) {
  std::vector<SyntheticMicrograph> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ph = sim::make_phantom(derive_seed(seed, 2 * i), cfg.phantom);
    out.push_back(simulate_micrograph(ph, ph.signal, cfg, derive_seed(seed, 2 * i + 1), max_pairs));
  }
  return out;
}

/// Balanced accept/reject set: even items are clean, odd items cycle through
/// the three defect kinds.
inline std::vector<SyntheticMicrograph> curation_set(std::size_t n, std::uint64_t seed, const SimConfig& cfg) {
  constexpr std::array kinds{sim::DefectKind::ice_blob, sim::DefectKind::empty, sim::DefectKind::drift_blur};
  std::vector<SyntheticMicrograph> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ph = sim::make_phantom(derive_seed(seed, 3 * i), cfg.phantom);
    const auto kind = i % 2 == 0 ? sim::DefectKind::clean : kinds[(i / 2) % kinds.size()];
    const auto d = sim::inject_defect(ph, kind, derive_seed(seed, 3 * i + 1));
    auto m = simulate_micrograph(ph, d.signal, cfg, derive_seed(seed, 3 * i + 2), 0);
    m.label = d.label;
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace draco::eval
