#pragma once

#include <cstdint>
#include <vector>

#include "draco/core/rng.hpp"
#include "draco/data/masking.hpp"
#include "draco/data/triplet.hpp"
#include "draco/model/draco_model.hpp"

namespace draco::eval {

struct TileConfig {
  std::size_t size = 64;
  std::size_t overlap = 32;
};

struct DenoiseOptions {
  TileConfig tile;
  std::size_t ensemble = 0;  // 0: one all-visible pass; K > 0: mean of K masked passes
  std::uint64_t seed = 0;
};

/// Tile origins along one axis: stride size - overlap, last tile flush with the end.
inline std::vector<std::size_t> tile_origins(std::size_t extent, const TileConfig& t) {
  if (t.size == 0 || t.overlap >= t.size) throw ConfigError("tile overlap must be smaller than the tile size");
  if (extent < t.size) {
    throw ShapeError("image side " + std::to_string(extent) + " is smaller than the tile size " + std::to_string(t.size));
  }
  std::vector<std::size_t> out;
  const std::size_t stride = t.size - t.overlap;
  for (std::size_t o = 0;; o += stride) {
    if (o + t.size >= extent) {
      out.push_back(extent - t.size);
      break;
    }
    out.push_back(o);
  }
  return out;
}

/// Prediction for one normalized tile, in normalized units.
template <class T>
Image predict_tile(const Image& tile, const model::ModelState<T>& s, std::size_t ensemble, Rng& rng) {
  ag::NoGradGuard guard;
  const auto& c = s.config;
  const auto x = model::patches_tensor<T>(data::patchify(tile, c.patch_size));
  data::PatchGrid g{{}, c.grid(), c.grid(), c.patch_size};
  if (ensemble == 0) {
    const auto z = model::encode(x, std::vector<bool>(c.tokens(), false), s);
    const auto pred = model::decode(model::project_latents(z, s), s);
    g.patches.assign(pred.values().begin(), pred.values().end());
    return data::unpatchify(g);
  }
  std::vector<double> acc(c.tokens() * c.patch_dim(), 0.0);
  for (std::size_t k = 0; k < ensemble; ++k) {
    const auto mp = data::sample_mask_pair(c.tokens(), c.gamma, rng());
    const auto z = model::combine_latents(model::encode(x, mp.m_odd, s), model::encode(x, mp.m_even, s), mp, s);
    const auto pred = model::decode(z, s);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += pred.values()[i];
  }
  g.patches.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) g.patches[i] = static_cast<float>(acc[i] / static_cast<double>(ensemble));
  return data::unpatchify(g);
}

/// Normalizes the micrograph by its own statistics, predicts overlapping tiles,
/// blends them with a separable triangular window and maps back to input units.
template <class T>
Image denoise(const Image& micrograph, const model::ModelState<T>& s, const DenoiseOptions& opt = {}) {
  const auto& c = s.config;
  if (opt.tile.size != c.out_size) {
    throw ConfigError("tile size " + std::to_string(opt.tile.size) + " differs from the model out_size " +
                      std::to_string(c.out_size));
  }
  const auto st = data::normalization_stats(micrograph);
  const Image norm = data::apply_affine(micrograph, 1.0, st.mean, st.stddev);
  const auto ys = tile_origins(micrograph.height, opt.tile), xs = tile_origins(micrograph.width, opt.tile);
  const std::size_t n = opt.tile.size;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = static_cast<double>(std::min(i + 1, n - i));
  std::vector<double> num(micrograph.size(), 0.0), den(micrograph.size(), 0.0);
  Rng rng(opt.seed);
  for (std::size_t y0 : ys) {
    for (std::size_t x0 : xs) {
      const Image p = predict_tile(crop(norm, y0, x0, n, n), s, opt.ensemble, rng);
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const std::size_t k = (y0 + y) * micrograph.width + x0 + x;
          num[k] += w[y] * w[x] * p.at(y, x);
          den[k] += w[y] * w[x];
        }
      }
    }
  }
  Image out(micrograph.height, micrograph.width);
  for (std::size_t k = 0; k < out.size(); ++k) out.pixels[k] = static_cast<float>(num[k] / den[k] * st.stddev + st.mean);
  return out;
}

}  // namespace draco::eval
