#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "draco/core/image.hpp"

namespace draco::io {

/// Binary 8-bit PGM, min-max scaled. For viewing only: metrics are always
/// computed on the float data.
inline std::vector<std::uint8_t> encode_pgm_preview(const Image& im) {
  float lo = INFINITY, hi = -INFINITY;
  for (float v : im.pixels) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float span = hi > lo ? hi - lo : 1.0f;
  const std::string head = "P5\n# viewing only: 8-bit min-max scaled\n" + std::to_string(im.width) + " " +
                           std::to_string(im.height) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.reserve(head.size() + im.size());
  for (float v : im.pixels) {
    const float t = std::isfinite(v) ? (v - lo) / span : 0.0f;
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0f, 1.0f) * 255.0f)));
  }
  return out;
}

}  // namespace draco::io
