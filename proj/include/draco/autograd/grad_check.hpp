#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "draco/autograd/tensor.hpp"

namespace draco::ag {

/// Relative error with a small absolute floor, so gradients that are zero
/// analytically compare against finite-difference noise on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-2) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

template <class T>
using ScalarFn = std::function<Tensor<T>(const std::vector<Tensor<T>>&)>;

struct GradCheckOptions {
  /// Upper bound on coordinates checked per input; 0 checks every element.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of `fn` at `inputs` against central
/// differences (f(x+eps) - f(x-eps)) / (2 eps), element by element.
template <class T>
GradCheckReport grad_check_report(const ScalarFn<T>& fn, const std::vector<Tensor<T>>& inputs, double eps,
                                  GradCheckOptions opts = {}) {
  if (!(eps >= 1e-4 && eps <= 1e-2)) throw InvalidArgument("grad_check: eps must lie in [1e-4, 1e-2]");
  std::vector<Tensor<T>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.emplace_back(in.shape(), in.values(), true);

  const Tensor<T> loss = fn(leaves);
  if (loss.numel() != 1) throw ShapeError("grad_check: function output must be scalar, got " + to_string(loss.shape()));
  std::vector<std::vector<T>> analytic(leaves.size());
  if (loss.requires_grad()) {
    backward(loss);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      analytic[i] = leaves[i].has_grad() ? std::vector<T>(leaves[i].grad().begin(), leaves[i].grad().end())
                                         : std::vector<T>(leaves[i].numel(), T(0));
    }
  } else {
    for (std::size_t i = 0; i < leaves.size(); ++i) analytic[i].assign(leaves[i].numel(), T(0));
  }

  std::mt19937_64 rng(opts.seed);
  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto values = leaves[i].mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_elements_per_input && coords.size() > opts.max_elements_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_elements_per_input);
    }
    for (std::size_t j : coords) {
      const T saved = values[j];
      const T hi = static_cast<T>(saved + eps);
      const T lo = static_cast<T>(saved - eps);
      values[j] = hi;
      const double plus = fn(leaves).item();
      values[j] = lo;
      const double minus = fn(leaves).item();
      values[j] = saved;
      // Divide by the representable step, not the requested one.
      const double numeric = (plus - minus) / (static_cast<double>(hi) - static_cast<double>(lo));
      report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic[i][j], numeric));
      ++report.checked;
    }
  }
  return report;
}

template <class T>
double grad_check(const ScalarFn<T>& fn, const std::vector<Tensor<T>>& inputs, double eps, GradCheckOptions opts = {}) {
  return grad_check_report(fn, inputs, eps, opts).max_rel_error;
}

}  // namespace draco::ag
