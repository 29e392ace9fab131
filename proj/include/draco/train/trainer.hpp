#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "draco/core/error.hpp"
#include "draco/core/rng.hpp"
#include "draco/data/masking.hpp"
#include "draco/data/triplet.hpp"
#include "draco/io/mrc.hpp"
#include "draco/model/draco_model.hpp"
#include "draco/train/config_io.hpp"

namespace draco::train {

using model::ModelConfig;
using model::ModelState;

/// Linear warm-up to base_lr, then cosine decay to 0 at total_steps.
inline double lr_schedule(std::size_t step, std::size_t warmup_steps, std::size_t total_steps, double base_lr) {
  if (warmup_steps > 0 && step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps <= warmup_steps) return base_lr;
  const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps));
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

inline double lr_schedule(std::size_t step, const TrainConfig& c) {
  return lr_schedule(step, c.warmup_steps, c.total_steps(), c.base_lr);
}

/// Adaptive moments with decoupled weight decay on matrices and kernels only.
template <class T>
struct AdamW {
  std::vector<std::vector<T>> m, v;

  void init(ModelState<T>& s) {
    m.clear();
    v.clear();
    s.visit([&](const std::string&, ag::Tensor<T>& p) {
      m.emplace_back(p.numel(), T(0));
      v.emplace_back(p.numel(), T(0));
    });
  }

  /// `step` is the 1-based update count used for bias correction.
  void update(ModelState<T>& s, const TrainConfig& c, double lr, std::size_t step) {
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    const T step_size = static_cast<T>(lr / bc1), inv_bc2 = static_cast<T>(1.0 / bc2), eps = static_cast<T>(c.adam_eps);
    std::size_t k = 0;
    s.visit([&](const std::string&, ag::Tensor<T>& p) {
      auto& mk = m[k];
      auto& vk = v[k];
      ++k;
      auto w = p.mutable_data();
      const bool decay = p.ndim() >= 2 && c.weight_decay > 0;
      const T wd = static_cast<T>(lr * c.weight_decay);
      const auto g = p.has_grad() ? p.grad() : std::span<const T>{};
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T gi = g.empty() ? T(0) : g[i];
        mk[i] = b1 * mk[i] + (T(1) - b1) * gi;
        vk[i] = b2 * vk[i] + (T(1) - b2) * gi * gi;
        if (decay) w[i] -= wd * w[i];
        w[i] -= step_size * mk[i] / (std::sqrt(vk[i] * inv_bc2) + eps);
      }
    });
  }
};

struct StepStats {
  double loss = 0, n2n = 0, recon = 0;
  double lr = 0;
  double grad_norm = 0;
  std::size_t recon_empty = 0;
};

/// Raw (unnormalized) triplets that training crops are drawn from.
struct Dataset {
  std::vector<data::Triplet> sources;
};

template <class T = float>
class Trainer {
 public:
  Trainer(const ModelState<T>& state, TrainConfig cfg) : state_(state.clone()), cfg_(std::move(cfg)), rng_(cfg_.seed) {
    validate(cfg_);
    model::validate(state_.config);
    opt_.init(state_);
  }

  ModelState<T>& state() { return state_; }
  const ModelState<T>& state() const { return state_; }
  const TrainConfig& config() const { return cfg_; }
  TrainConfig& config() { return cfg_; }
  std::size_t step() const { return step_; }
  const Rng& rng() const { return rng_; }
  const AdamW<T>& optimizer() const { return opt_; }

  /// One update on already normalized triplets; every sample gets a fresh mask.
  StepStats train_step(const std::vector<data::Triplet>& batch) {
    if (batch.empty()) throw InvalidArgument("train_step: empty batch");
    std::vector<std::uint64_t> mask_seeds(batch.size());
    for (auto& s : mask_seeds) s = rng_();
    return step_with_masks(batch, mask_seeds);
  }

  StepStats step_with_masks(const std::vector<data::Triplet>& batch, const std::vector<std::uint64_t>& mask_seeds) {
    const ModelConfig& mc = state_.config;
    state_.visit([](const std::string&, ag::Tensor<T>& p) { p.zero_grad(); });
    StepStats st;
    ag::Tensor<T> total;
    const T inv_b = static_cast<T>(1.0 / static_cast<double>(batch.size()));
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& t = batch[b];
      const auto mp = data::sample_mask_pair(mc.tokens(), mc.gamma, mask_seeds[b]);
      const auto x = model::patches_tensor<T>(data::patchify(t.original, mc.patch_size));
      model::ForwardResult<T> r;
      if (cfg_.stage == Stage::warmup) {
        r = model::forward_warmup(x, mp.m_odd, state_);
      } else {
        r = model::forward_draco(x, model::patches_tensor<T>(data::patchify(t.odd, mc.patch_size)),
                                 model::patches_tensor<T>(data::patchify(t.even, mc.patch_size)), mp, state_);
      }
      st.n2n += r.n2n.item() / static_cast<double>(batch.size());
      st.recon += r.recon.item() / static_cast<double>(batch.size());
      st.recon_empty += r.recon_empty;
      const auto scaled = ag::scale(r.loss, inv_b);
      total = total.defined() ? ag::add(total, scaled) : scaled;
    }
    st.loss = total.item();
    if (!std::isfinite(st.loss)) {
      std::string seeds;
      for (auto s : mask_seeds) seeds += " " + std::to_string(s);
      throw NumericError("non-finite loss at step " + std::to_string(step_) + " (mask seeds:" + seeds + ")");
    }
    ag::backward(total);
    st.grad_norm = clip_gradients();
    ++step_;
    st.lr = lr_schedule(step_ - 1, cfg_);
    opt_.update(state_, cfg_, st.lr, step_);
    return st;
  }

  /// Draws a batch (source index, crop seed) from the trainer's own stream so
  /// that a resumed run sees the same samples.
  std::vector<data::Triplet> sample_batch(const Dataset& ds) {
    if (ds.sources.empty()) throw InvalidArgument("empty training set");
    data::AugmentConfig aug{state_.config.out_size, cfg_.crop_frac_min, cfg_.crop_frac_max, cfg_.flips};
    std::vector<data::Triplet> batch;
    batch.reserve(cfg_.batch_size);
    for (std::size_t i = 0; i < cfg_.batch_size; ++i) {
      const std::size_t idx = static_cast<std::size_t>(rng_() % ds.sources.size());
      const std::uint64_t seed = rng_();
      batch.push_back(data::normalize_triplet(data::augment(ds.sources[idx], seed, aug), {cfg_.dose_equalize}));
    }
    return batch;
  }

  StepStats fit_step(const Dataset& ds) { return train_step(sample_batch(ds)); }

  void restore(ModelState<T> s, AdamW<T> opt, std::size_t step, Rng rng) {
    state_ = std::move(s);
    opt_ = std::move(opt);
    step_ = step;
    rng_ = rng;
  }

 private:
  // Global-norm clipping scales every component by one positive factor.
  double clip_gradients() {
    double sq = 0;
    state_.visit([&](const std::string&, ag::Tensor<T>& p) {
      if (!p.has_grad()) return;
      for (T g : p.grad()) sq += static_cast<double>(g) * g;
    });
    const double norm = std::sqrt(sq);
    if (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) {
      const T f = static_cast<T>(cfg_.clip_norm / norm);
      state_.visit([&](const std::string&, ag::Tensor<T>& p) {
        if (!p.has_grad()) return;
        auto g = p.node()->grad_buffer();
        for (auto& x : g) x *= f;
      });
    }
    return norm;
  }

  ModelState<T> state_;
  TrainConfig cfg_;
  AdamW<T> opt_;
  std::size_t step_ = 0;
  Rng rng_;
};

// ---------------------------------------------------------------- checkpoints

inline constexpr char kCheckpointMagic[8] = {'D', 'R', 'A', 'C', 'O', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ModelState<float> state;
  AdamW<float> optimizer;
  std::size_t step = 0;
  Rng rng;
  std::uint64_t config_hash = 0;
};

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void floats(std::span<const float> v) {
    u64(v.size());
    bytes(v.data(), v.size() * 4);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void bytes(void* p, std::size_t n) {
    if (n > b_.size() - pos_) throw Error(ErrorKind::format, "checkpoint truncated");
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    const auto n = u64();
    if (n > b_.size() - pos_) throw Error(ErrorKind::format, "checkpoint truncated");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::vector<float> floats() {
    const auto n = u64();
    if (n > (b_.size() - pos_) / 4) throw Error(ErrorKind::format, "checkpoint truncated");
    std::vector<float> v(n);
    bytes(v.data(), n * 4);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string full_config_text(const ModelConfig& m, const TrainConfig& t) {
  ModelConfig mm = m;
  TrainConfig tt = t;
  return Settings(mm, tt).text();
}

inline std::vector<std::uint8_t> encode_checkpoint(const ModelState<float>& s, const AdamW<float>& opt,
                                                   const TrainConfig& t, std::size_t step, const Rng& rng) {
  detail::Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  w.str(full_config_text(s.config, t));
  w.u64(model_config_hash(s.config));
  w.u64(step);
  w.str(serialize_rng(rng));
  std::vector<std::pair<std::string, const ag::Tensor<float>*>> params;
  s.visit([&](const std::string& n, const ag::Tensor<float>& p) { params.emplace_back(n, &p); });
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i].second;
    w.str(params[i].first);
    w.u32(static_cast<std::uint32_t>(p.ndim()));
    for (auto d : p.shape()) w.u64(d);
    w.floats(p.data());
    w.floats(i < opt.m.size() ? std::span<const float>(opt.m[i]) : std::span<const float>());
    w.floats(i < opt.v.size() ? std::span<const float>(opt.v[i]) : std::span<const float>());
  }
  w.u64(fnv1a(w.out));
  return w.out;
}

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const Trainer<T>& tr) {
  return encode_checkpoint(tr.state(), tr.optimizer(), tr.config(), tr.step(), tr.rng());
}

/// expected_model, when given, must hash equal to the stored model config.
inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const ModelConfig* expected_model = nullptr) {
  if (bytes.size() < 8 + 4 + 8) throw Error(ErrorKind::format, "checkpoint truncated");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw Error(ErrorKind::format, "not a checkpoint (bad magic)");
  if (fnv1a(bytes.first(bytes.size() - 8)) != stored) throw Error(ErrorKind::format, "checkpoint checksum mismatch");
  detail::Reader r(bytes.first(bytes.size() - 8));
  char magic[8];
  r.bytes(magic, 8);
  if (r.u32() != kCheckpointVersion) throw Error(ErrorKind::format, "unsupported checkpoint version");
  Checkpoint ck;
  Settings(ck.model, ck.train).apply_text(r.str());
  ck.config_hash = r.u64();
  if (ck.config_hash != model_config_hash(ck.model)) throw ConfigError("checkpoint config hash does not match its config");
  if (expected_model && model_config_hash(*expected_model) != ck.config_hash) {
    throw ConfigError("checkpoint model config differs from the requested one");
  }
  ck.step = r.u64();
  ck.rng = deserialize_rng(r.str());
  ck.state = model::init_model<float>(ck.model, 0);
  ck.optimizer.init(ck.state);
  const std::uint32_t count = r.u32();
  std::uint32_t seen = 0;
  std::size_t k = 0;
  ck.state.visit([&](const std::string& name, ag::Tensor<float>& p) {
    if (seen++ >= count) throw Error(ErrorKind::format, "checkpoint is missing tensors");
    if (r.str() != name) throw Error(ErrorKind::format, "checkpoint tensor order differs at '" + name + "'");
    const std::uint32_t nd = r.u32();
    ag::Shape shape(nd);
    for (auto& d : shape) d = r.u64();
    if (shape != p.shape()) throw Error(ErrorKind::format, "checkpoint tensor '" + name + "' has the wrong shape");
    p = ag::Tensor<float>(shape, r.floats(), true);
    auto m = r.floats(), v = r.floats();
    if (m.size() != p.numel() || v.size() != p.numel()) throw Error(ErrorKind::format, "checkpoint moments malformed");
    ck.optimizer.m[k] = std::move(m);
    ck.optimizer.v[k] = std::move(v);
    ++k;
  });
  if (seen != count) throw Error(ErrorKind::format, "checkpoint has extra tensors");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  io::write_file_atomic(path, bytes);
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Trainer<T>& tr) {
  save_checkpoint(path, encode_checkpoint(tr));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
  return decode_checkpoint(io::read_file_bytes(path), expected);
}

inline Trainer<float> resume(Checkpoint ck) {
  Trainer<float> tr(ck.state, ck.train);
  tr.restore(std::move(ck.state), std::move(ck.optimizer), ck.step, ck.rng);
  return tr;
}

/// Hash of the encoder-side parameters, for checking that probing leaves them alone.
inline std::uint64_t encoder_hash(const ModelState<float>& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  s.visit([&](const std::string& name, const ag::Tensor<float>& p) {
    if (!ModelState<float>::is_encoder_param(name)) return;
    h = fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(name.data()), name.size()), h);
    h = fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(p.data().data()), p.numel() * 4), h);
  });
  return h;
}

}  // namespace draco::train
