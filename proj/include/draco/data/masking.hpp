#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "draco/core/error.hpp"
#include "draco/core/rng.hpp"

namespace draco::data {

/// true = masked. A patch is visible in at most one of the two inputs.
struct MaskPair {
  std::vector<bool> m_odd;
  std::vector<bool> m_even;
  double gamma = 0.75;

  std::size_t size() const noexcept { return m_odd.size(); }
};

/// Patches visible in each input: k = round-half-up((1 - gamma) N).
inline std::size_t visible_count(std::size_t n, double gamma) {
  return static_cast<std::size_t>(std::floor((1.0 - gamma) * static_cast<double>(n) + 0.5 + 1e-9));
}

inline void check_mask_ratio(std::size_t n, double gamma) {
  if (!(gamma >= 0.5) || gamma > 1.0) {
    throw InvalidArgument("mask ratio gamma must lie in [0.5, 1], got " + std::to_string(gamma));
  }
  if (2 * visible_count(n, gamma) > n) {
    throw InvalidArgument("mask ratio " + std::to_string(gamma) + " leaves 2k > N visible patches for N = " +
                          std::to_string(n));
  }
}

inline MaskPair sample_mask_pair(std::size_t n, double gamma, std::uint64_t seed) {
  check_mask_ratio(n, gamma);
  const std::size_t k = visible_count(n, gamma);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  MaskPair mp{std::vector<bool>(n, true), std::vector<bool>(n, true), gamma};
  for (std::size_t i = 0; i < k; ++i) mp.m_odd[perm[i]] = false;
  for (std::size_t i = k; i < 2 * k; ++i) mp.m_even[perm[i]] = false;
  return mp;
}

enum class MaskViolation { none, length, gamma_range, both_visible, odd_count, even_count };

struct MaskReport {
  MaskViolation violation = MaskViolation::none;
  std::optional<std::size_t> index;
  std::string message;

  bool ok() const noexcept { return violation == MaskViolation::none; }
};

/// First violated invariant, checked in the order: lengths, gamma, complementarity, counts.
inline MaskReport validate_mask_pair(const MaskPair& mp) {
  const std::size_t n = mp.m_odd.size();
  if (mp.m_even.size() != n) {
    return {MaskViolation::length, std::nullopt, "m_odd and m_even lengths differ"};
  }
  if (!(mp.gamma >= 0.5) || mp.gamma > 1.0) {
    return {MaskViolation::gamma_range, std::nullopt, "gamma " + std::to_string(mp.gamma) + " outside [0.5, 1]"};
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!mp.m_odd[i] && !mp.m_even[i]) {
      return {MaskViolation::both_visible, i, "patch " + std::to_string(i) + " is visible in both inputs"};
    }
  }
  const std::size_t want = n - visible_count(n, mp.gamma);
  const auto masked_odd = static_cast<std::size_t>(std::count(mp.m_odd.begin(), mp.m_odd.end(), true));
  const auto masked_even = static_cast<std::size_t>(std::count(mp.m_even.begin(), mp.m_even.end(), true));
  if (masked_odd != want) {
    return {MaskViolation::odd_count, std::nullopt,
            "odd input masks " + std::to_string(masked_odd) + " patches, expected " + std::to_string(want)};
  }
  if (masked_even != want) {
    return {MaskViolation::even_count, std::nullopt,
            "even input masks " + std::to_string(masked_even) + " patches, expected " + std::to_string(want)};
  }
  return {};
}

}  // namespace draco::data
