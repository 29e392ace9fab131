#pragma once

#include <memory>

#include "draco/autograd/gradcheck_suite.hpp"
#include "draco/model/draco_model.hpp"

namespace draco::model {

/// A configuration small enough for finite differences over every parameter tensor.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.patch_size = 2;
  c.out_size = 8;
  c.embed_dim = 8;
  c.depth = 1;
  c.n_heads = 2;
  c.decoder_dim = 8;
  c.decoder_depth = 1;
  c.decoder_heads = 2;
  c.mlp_ratio = 2;
  c.neck_channels = {4, 4, 4};
  return c;
}

namespace detail {

struct LossCaseData {
  ModelState<double> state;
  Tensor<double> x_orig, x_odd, x_even;
  data::MaskPair mp;
};

/// The parameters are the checked inputs; the loss function rebinds them into
/// a state whose images and masks were drawn alongside.
inline ag::GradCase model_loss_case(std::string name, bool warmup) {
  auto shared = std::make_shared<LossCaseData>();
  ag::GradCase c;
  c.name = std::move(name);
  c.max_elements_per_input = 4;
  c.make_inputs = [shared](std::mt19937_64& rng) {
    const ModelConfig cfg = tiny_config();
    shared->state = init_model<double>(cfg, rng());
    // Perturb the zero-initialized biases and unit gains so their gradients are generic.
    shared->state.visit([&](const std::string&, Tensor<double>& t) {
      t = Tensor<double>(t.shape(), ag::add(t, ag::random_tensor(rng, t.shape(), -0.2, 0.2)).values(), true);
    });
    const std::size_t n = cfg.tokens(), d = cfg.patch_dim();
    shared->x_orig = ag::random_tensor(rng, {n, d}, -2, 2);
    shared->x_odd = ag::random_tensor(rng, {n, d}, -2, 2);
    shared->x_even = ag::random_tensor(rng, {n, d}, -2, 2);
    shared->mp = data::sample_mask_pair(n, cfg.gamma, rng());
    std::vector<Tensor<double>> params;
    shared->state.visit([&](const std::string&, const Tensor<double>& t) { params.push_back(t.detach()); });
    return params;
  };
  c.fn = [shared, warmup](const std::vector<Tensor<double>>& in) {
    ModelState<double> s = shared->state;
    std::size_t i = 0;
    s.visit([&](const std::string&, Tensor<double>& t) { t = in[i++]; });
    if (warmup) return forward_warmup(shared->x_orig, shared->mp.m_odd, s).loss;
    return forward_draco(shared->x_orig, shared->x_odd, shared->x_even, shared->mp, s).loss;
  };
  return c;
}

}  // namespace detail

/// Every primitive plus the full hybrid objective and the warm-up objective.
inline std::vector<ag::GradCase> all_grad_cases() {
  auto cases = ag::primitive_grad_cases();
  cases.push_back(detail::model_loss_case("draco_total_loss", false));
  cases.push_back(detail::model_loss_case("warmup_recon_loss", true));
  return cases;
}

}  // namespace draco::model
