#pragma once

#include <chrono>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "draco/autograd/grad_check.hpp"
#include "draco/autograd/ops.hpp"

namespace draco::ag {

/// One differentiable primitive under test: builds random inputs for an
/// instance and reduces the primitive's output to a scalar.
struct GradCase {
  std::string name;
  std::function<std::vector<Tensor<double>>(std::mt19937_64&)> make_inputs;
  ScalarFn<double> fn;
  std::size_t max_elements_per_input = 0;
};

struct GradCaseResult {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
};

inline Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor<double>(std::move(shape), std::move(v));
}

/// sum(out * w) with a fixed pseudo-random w: probes the whole Jacobian
/// rather than just its column sums.
inline Tensor<double> probe_sum(const Tensor<double>& out) {
  std::mt19937_64 rng(0xC0FFEE ^ out.numel());
  return sum(mul(out, random_tensor(rng, out.shape())));
}

/// The primitive cases used by `gradcheck` and the test suites.
inline std::vector<GradCase> primitive_grad_cases() {
  using TD = Tensor<double>;
  using Inputs = std::vector<TD>;
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, std::function<Inputs(std::mt19937_64&)> mk, ScalarFn<double> fn) {
    cases.push_back({std::move(name), std::move(mk), std::move(fn), 0});
  };

  add_case("add", [](auto& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {3, 4})}; },
           [](const Inputs& in) { return probe_sum(add(in[0], in[1])); });
  add_case("add_trailing_vector", [](auto& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {4})}; },
           [](const Inputs& in) { return probe_sum(add(in[0], in[1])); });
  add_case("add_leading_batch", [](auto& r) { return Inputs{random_tensor(r, {2, 3, 4}), random_tensor(r, {3, 4})}; },
           [](const Inputs& in) { return probe_sum(add(in[0], in[1])); });
  add_case("sub", [](auto& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {4})}; },
           [](const Inputs& in) { return probe_sum(sub(in[0], in[1])); });
  add_case("mul", [](auto& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {3, 4})}; },
           [](const Inputs& in) { return probe_sum(mul(in[0], in[1])); });
  add_case("mul_trailing_vector", [](auto& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {4})}; },
           [](const Inputs& in) { return probe_sum(mul(in[0], in[1])); });
  add_case("scale", [](auto& r) { return Inputs{random_tensor(r, {5})}; },
           [](const Inputs& in) { return probe_sum(scale(in[0], 0.37)); });
  add_case("add_scalar", [](auto& r) { return Inputs{random_tensor(r, {5})}; },
           [](const Inputs& in) { return probe_sum(add_scalar(in[0], 1.5)); });
  add_case("scale_rows", [](auto& r) { return Inputs{random_tensor(r, {4, 3})}; },
           [](const Inputs& in) { return probe_sum(scale_rows(in[0], std::vector<double>{1.0, 0.0, -2.0, 0.5})); });
  add_case("gelu", [](auto& r) { return Inputs{random_tensor(r, {6})}; },
           [](const Inputs& in) { return probe_sum(gelu(in[0])); });
  add_case("matmul", [](auto& r) { return Inputs{random_tensor(r, {3, 4}), random_tensor(r, {4, 2})}; },
           [](const Inputs& in) { return probe_sum(matmul(in[0], in[1])); });
  add_case("transpose", [](auto& r) { return Inputs{random_tensor(r, {3, 4})}; },
           [](const Inputs& in) { return probe_sum(transpose(in[0])); });
  add_case("reshape", [](auto& r) { return Inputs{random_tensor(r, {3, 4})}; },
           [](const Inputs& in) { return probe_sum(reshape(in[0], {2, 6})); });
  add_case("concat_axis0", [](auto& r) { return Inputs{random_tensor(r, {2, 3}), random_tensor(r, {1, 3})}; },
           [](const Inputs& in) { return probe_sum(concat(in, 0)); });
  add_case("concat_axis1", [](auto& r) { return Inputs{random_tensor(r, {2, 3}), random_tensor(r, {2, 2})}; },
           [](const Inputs& in) { return probe_sum(concat(in, 1)); });
  add_case("slice", [](auto& r) { return Inputs{random_tensor(r, {3, 5})}; },
           [](const Inputs& in) { return probe_sum(slice(in[0], 1, 1, 3)); });
  add_case("gather_rows", [](auto& r) { return Inputs{random_tensor(r, {5, 3})}; },
           [](const Inputs& in) { return probe_sum(gather_rows(in[0], {4, 0, 2, 0})); });
  add_case("scatter_rows", [](auto& r) { return Inputs{random_tensor(r, {2, 3})}; },
           [](const Inputs& in) { return probe_sum(scatter_rows(in[0], {3, 1}, 5)); });
  add_case("softmax_last", [](auto& r) { return Inputs{random_tensor(r, {3, 4})}; },
           [](const Inputs& in) { return probe_sum(softmax(in[0], 1)); });
  add_case("softmax_first", [](auto& r) { return Inputs{random_tensor(r, {3, 4})}; },
           [](const Inputs& in) { return probe_sum(softmax(in[0], 0)); });
  add_case("layer_norm",
           [](auto& r) { return Inputs{random_tensor(r, {3, 5}), random_tensor(r, {5}), random_tensor(r, {5})}; },
           [](const Inputs& in) { return probe_sum(layer_norm(in[0], in[1], in[2])); });
  add_case("conv2d",
           [](auto& r) { return Inputs{random_tensor(r, {2, 4, 5}), random_tensor(r, {3, 2, 3, 3}), random_tensor(r, {3})}; },
           [](const Inputs& in) { return probe_sum(conv2d(in[0], in[1], in[2])); });
  add_case("sum", [](auto& r) { return Inputs{random_tensor(r, {4})}; },
           [](const Inputs& in) { return sum(mul(in[0], in[0])); });
  add_case("mean", [](auto& r) { return Inputs{random_tensor(r, {4})}; },
           [](const Inputs& in) { return mean(mul(in[0], in[0])); });
  add_case("mean_rows", [](auto& r) { return Inputs{random_tensor(r, {4, 3})}; },
           [](const Inputs& in) { return probe_sum(mean_rows(in[0])); });
  add_case("mse", [](auto& r) { return Inputs{random_tensor(r, {3, 3})}; },
           [](const Inputs& in) {
             std::mt19937_64 fixed(7);
             return mse(in[0], random_tensor(fixed, {3, 3}));
           });
  return cases;
}

inline GradCaseResult run_grad_case(const GradCase& c, std::size_t instances, double eps, std::uint64_t seed) {
  GradCaseResult res{c.name, instances, 0.0};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    auto inputs = c.make_inputs(rng);
    GradCheckOptions opts{c.max_elements_per_input, seed + i};
    res.max_rel_error = std::max(res.max_rel_error, grad_check<double>(c.fn, inputs, eps, opts));
  }
  return res;
}

}  // namespace draco::ag
