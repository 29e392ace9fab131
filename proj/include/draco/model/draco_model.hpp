#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "draco/autograd/ops.hpp"
#include "draco/core/error.hpp"
#include "draco/core/image.hpp"
#include "draco/core/rng.hpp"
#include "draco/data/masking.hpp"
#include "draco/data/triplet.hpp"

namespace draco::model {

using ag::Tensor;

/// Desk-scale defaults. Full scale: p = 16, embed_dim = 512, depth = 8,
/// out_size = 256.
struct ModelConfig {
  std::size_t patch_size = 8;
  std::size_t embed_dim = 128;
  std::size_t depth = 4;
  std::size_t n_heads = 4;
  std::size_t decoder_dim = 64;
  std::size_t decoder_depth = 2;
  std::size_t decoder_heads = 4;
  std::size_t mlp_ratio = 4;
  std::vector<std::size_t> neck_channels{64, 64, 64};
  double gamma = 0.75;
  double lambda = 1.0;
  double n2n_weight = 1.0;
  std::size_t out_size = 64;

  std::size_t grid() const { return out_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size; }
};

inline void validate(const ModelConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.patch_size == 0 || c.out_size == 0 || c.out_size % c.patch_size != 0) {
    fail("out_size must be a positive multiple of patch_size");
  }
  if (c.embed_dim == 0 || c.n_heads == 0 || c.embed_dim % c.n_heads != 0) fail("embed_dim must be divisible by n_heads");
  if (c.decoder_dim == 0 || c.decoder_heads == 0 || c.decoder_dim % c.decoder_heads != 0) {
    fail("decoder_dim must be divisible by decoder_heads");
  }
  if (c.embed_dim % 4 != 0 || c.decoder_dim % 4 != 0) fail("2D sinusoidal embeddings need dims divisible by 4");
  if (c.neck_channels.size() != 3) fail("the convolution neck has exactly 3 layers");
  for (auto ch : c.neck_channels) {
    if (ch == 0) fail("neck channel counts must be positive");
  }
  if (c.mlp_ratio == 0) fail("mlp_ratio must be positive");
  if (!(c.gamma >= 0.5) || c.gamma > 1.0) fail("gamma must lie in [0.5, 1]");
  if (!(c.lambda >= 0)) fail("lambda must be >= 0");
  if (!(c.n2n_weight >= 0)) fail("n2n_weight must be >= 0");
}

template <class T>
struct Linear {
  Tensor<T> w, b;  // [in, out], [out]
};

template <class T>
struct Norm {
  Tensor<T> g, b;
};

template <class T>
struct Block {
  Norm<T> ln1;
  Linear<T> qkv, proj;
  Norm<T> ln2;
  Linear<T> fc1, fc2;
};

template <class T>
struct Conv {
  Tensor<T> w, b;  // [out, in, 3, 3], [out]
};

/// Fixed 2D sinusoidal table [grid*grid, dim]: the first half of each row
/// encodes the row index, the second half the column index.
template <class T>
Tensor<T> sincos_2d(std::size_t grid, std::size_t dim) {
  const std::size_t quarter = dim / 4;
  std::vector<T> v(grid * grid * dim);
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      T* row = v.data() + (gy * grid + gx) * dim;
      for (std::size_t i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
        row[i] = static_cast<T>(std::sin(gy * omega));
        row[quarter + i] = static_cast<T>(std::cos(gy * omega));
        row[2 * quarter + i] = static_cast<T>(std::sin(gx * omega));
        row[3 * quarter + i] = static_cast<T>(std::cos(gx * omega));
      }
    }
  }
  return Tensor<T>({grid * grid, dim}, std::move(v));
}

template <class T>
struct ModelState {
  ModelConfig config;
  Linear<T> patch_embed;
  std::vector<Block<T>> encoder;
  Norm<T> encoder_norm;
  Linear<T> decoder_embed;
  Tensor<T> mask_token;  // [1, decoder_dim]
  std::vector<Block<T>> decoder;
  Norm<T> decoder_norm;
  std::array<Conv<T>, 3> neck;
  Linear<T> head;
  Tensor<T> pos_enc, pos_dec;  // fixed

  /// Every learnable tensor with a stable name, in a fixed order.
  template <class F>
  void visit(F&& f) {
    auto lin = [&](const std::string& n, Linear<T>& l) {
      f(n + ".w", l.w);
      f(n + ".b", l.b);
    };
    auto norm = [&](const std::string& n, Norm<T>& l) {
      f(n + ".g", l.g);
      f(n + ".b", l.b);
    };
    auto block = [&](const std::string& n, Block<T>& b) {
      norm(n + ".ln1", b.ln1);
      lin(n + ".qkv", b.qkv);
      lin(n + ".proj", b.proj);
      norm(n + ".ln2", b.ln2);
      lin(n + ".fc1", b.fc1);
      lin(n + ".fc2", b.fc2);
    };
    lin("patch_embed", patch_embed);
    for (std::size_t i = 0; i < encoder.size(); ++i) block("encoder." + std::to_string(i), encoder[i]);
    norm("encoder_norm", encoder_norm);
    lin("decoder_embed", decoder_embed);
    f(std::string("mask_token"), mask_token);
    for (std::size_t i = 0; i < decoder.size(); ++i) block("decoder." + std::to_string(i), decoder[i]);
    norm("decoder_norm", decoder_norm);
    for (std::size_t i = 0; i < 3; ++i) {
      f("neck." + std::to_string(i) + ".w", neck[i].w);
      f("neck." + std::to_string(i) + ".b", neck[i].b);
    }
    lin("head", head);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<ModelState*>(this)->visit([&](const std::string& n, Tensor<T>& t) { f(n, static_cast<const Tensor<T>&>(t)); });
  }

  /// Names of the encoder-side tensors (the frozen backbone for probing).
  static bool is_encoder_param(const std::string& name) {
    return name.rfind("patch_embed", 0) == 0 || name.rfind("encoder", 0) == 0;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  /// Tensors share storage on copy; this makes an independent set of leaves.
  ModelState clone() const {
    ModelState c = *this;
    c.visit([](const std::string&, Tensor<T>& t) { t = Tensor<T>(t.shape(), t.values(), true); });
    return c;
  }

  template <class U>
  ModelState<U> cast() const;
};

namespace detail {

template <class T>
Tensor<T> uniform_tensor(Rng& rng, ag::Shape shape, double limit) {
  std::vector<T> v(ag::numel(shape));
  for (auto& x : v) x = static_cast<T>(uniform(rng, -limit, limit));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <class T>
Linear<T> make_linear(Rng& rng, std::size_t in, std::size_t out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  return {uniform_tensor<T>(rng, {in, out}, limit), Tensor<T>::zeros({out}, true)};
}

template <class T>
Norm<T> make_norm(std::size_t d) {
  return {Tensor<T>::full({d}, T(1), true), Tensor<T>::zeros({d}, true)};
}

template <class T>
Block<T> make_block(Rng& rng, std::size_t d, std::size_t ratio) {
  return {make_norm<T>(d), make_linear<T>(rng, d, 3 * d), make_linear<T>(rng, d, d),
          make_norm<T>(d), make_linear<T>(rng, d, ratio * d), make_linear<T>(rng, ratio * d, d)};
}

template <class T>
Conv<T> make_conv(Rng& rng, std::size_t in, std::size_t out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(9 * (in + out)));
  return {uniform_tensor<T>(rng, {out, in, 3, 3}, limit), Tensor<T>::zeros({out}, true)};
}

}  // namespace detail

template <class T>
ModelState<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  ModelState<T> s;
  s.config = cfg;
  s.patch_embed = detail::make_linear<T>(rng, cfg.patch_dim(), cfg.embed_dim);
  for (std::size_t i = 0; i < cfg.depth; ++i) s.encoder.push_back(detail::make_block<T>(rng, cfg.embed_dim, cfg.mlp_ratio));
  s.encoder_norm = detail::make_norm<T>(cfg.embed_dim);
  s.decoder_embed = detail::make_linear<T>(rng, cfg.embed_dim, cfg.decoder_dim);
  std::vector<T> tok(cfg.decoder_dim);
  for (auto& v : tok) v = static_cast<T>(0.02 * normal(rng));
  s.mask_token = Tensor<T>({1, cfg.decoder_dim}, std::move(tok), true);
  for (std::size_t i = 0; i < cfg.decoder_depth; ++i) {
    s.decoder.push_back(detail::make_block<T>(rng, cfg.decoder_dim, cfg.mlp_ratio));
  }
  s.decoder_norm = detail::make_norm<T>(cfg.decoder_dim);
  std::size_t in = cfg.decoder_dim;
  for (std::size_t i = 0; i < 3; ++i) {
    s.neck[i] = detail::make_conv<T>(rng, in, cfg.neck_channels[i]);
    in = cfg.neck_channels[i];
  }
  s.head = detail::make_linear<T>(rng, in, cfg.patch_dim());
  s.pos_enc = sincos_2d<T>(cfg.grid(), cfg.embed_dim);
  s.pos_dec = sincos_2d<T>(cfg.grid(), cfg.decoder_dim);
  return s;
}

template <class T>
template <class U>
ModelState<U> ModelState<T>::cast() const {
  ModelState<U> out = init_model<U>(config, 0);
  std::vector<const Tensor<T>*> src;
  visit([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.visit([&](const std::string&, Tensor<U>& t) {
    const auto& v = src[i++]->values();
    t = Tensor<U>(t.shape(), std::vector<U>(v.begin(), v.end()), true);
  });
  return out;
}

// ---------------------------------------------------------------- layers

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Linear<T>& l) {
  return ag::add(ag::matmul(x, l.w), l.b);
}

template <class T>
Tensor<T> attention(const Tensor<T>& x, const Block<T>& b, std::size_t heads) {
  const std::size_t d = x.dim(1), dh = d / heads;
  const Tensor<T> qkv = linear(x, b.qkv);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T> q = ag::slice(qkv, 1, h * dh, dh);
    const Tensor<T> k = ag::slice(qkv, 1, d + h * dh, dh);
    const Tensor<T> v = ag::slice(qkv, 1, 2 * d + h * dh, dh);
    const Tensor<T> a = ag::softmax(ag::scale(ag::matmul(q, ag::transpose(k)), scale), 1);
    outs.push_back(ag::matmul(a, v));
  }
  return linear(heads == 1 ? outs[0] : ag::concat(outs, 1), b.proj);
}

/// Pre-norm transformer block.
template <class T>
Tensor<T> block_forward(const Tensor<T>& x, const Block<T>& b, std::size_t heads) {
  const Tensor<T> h = ag::add(x, attention(ag::layer_norm(x, b.ln1.g, b.ln1.b), b, heads));
  const Tensor<T> m = linear(ag::gelu(linear(ag::layer_norm(h, b.ln2.g, b.ln2.b), b.fc1)), b.fc2);
  return ag::add(h, m);
}

template <class T>
Tensor<T> patches_tensor(const data::PatchGrid& g) {
  return Tensor<T>({g.count(), g.dim()}, std::vector<T>(g.patches.begin(), g.patches.end()));
}

template <class T>
void check_patches(const Tensor<T>& x, const ModelConfig& c, const char* op) {
  if (x.ndim() != 2 || x.dim(0) != c.tokens() || x.dim(1) != c.patch_dim()) {
    throw ShapeError(std::string(op) + ": expected patches [" + std::to_string(c.tokens()) + ", " +
                     std::to_string(c.patch_dim()) + "], got " + ag::to_string(x.shape()));
  }
}

// ---------------------------------------------------------------- model

/// Encoder over visible patches; masked rows of the result are exact zeros.
template <class T>
Tensor<T> encode(const Tensor<T>& patches, const std::vector<bool>& mask, const ModelState<T>& s) {
  const ModelConfig& c = s.config;
  check_patches(patches, c, "encode");
  if (mask.size() != c.tokens()) throw ShapeError("encode: mask length differs from patch count");
  std::vector<std::size_t> visible;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) visible.push_back(i);
  }
  if (visible.empty()) throw InvalidArgument("encode: every patch is masked");
  Tensor<T> h = ag::gather_rows(ag::add(linear(patches, s.patch_embed), s.pos_enc), visible);
  for (const auto& b : s.encoder) h = block_forward(h, b, c.n_heads);
  h = ag::layer_norm(h, s.encoder_norm.g, s.encoder_norm.b);
  return ag::scatter_rows(h, std::move(visible), c.tokens());
}

/// Rows of the last combine_latents call that matched each source exactly.
struct SelectionCounters {
  std::size_t from_odd = 0, from_even = 0, from_token = 0, mixed = 0;

  std::size_t total() const { return from_odd + from_even + from_token + mixed; }
};

template <class T>
Tensor<T> project_latents(const Tensor<T>& z, const ModelState<T>& s) {
  return linear(z, s.decoder_embed);
}

/// z_i = (1 - m_o) P(z_o)_i + (1 - m_e) P(z_e)_i + m_o m_e [MASK], where P is
/// the encoder-to-decoder width projection.
template <class T>
Tensor<T> combine_latents(const Tensor<T>& z_odd, const Tensor<T>& z_even, const data::MaskPair& mp,
                          const ModelState<T>& s, SelectionCounters* counters = nullptr) {
  const std::size_t n = s.config.tokens();
  if (mp.size() != n || mp.m_even.size() != n) throw ShapeError("combine_latents: mask length differs from token count");
  if (const auto r = data::validate_mask_pair(mp); !r.ok()) {
    throw InvalidArgument("combine_latents: invalid mask pair: " + r.message);
  }
  std::vector<T> w_odd(n), w_even(n), w_both(n);
  for (std::size_t i = 0; i < n; ++i) {
    w_odd[i] = mp.m_odd[i] ? T(0) : T(1);
    w_even[i] = mp.m_even[i] ? T(0) : T(1);
    w_both[i] = mp.m_odd[i] && mp.m_even[i] ? T(1) : T(0);
  }
  const Tensor<T> po = project_latents(z_odd, s), pe = project_latents(z_even, s);
  const Tensor<T> z = ag::add(ag::add(ag::scale_rows(po, std::move(w_odd)), ag::scale_rows(pe, std::move(w_even))),
                              ag::matmul(Tensor<T>({n, 1}, std::move(w_both)), s.mask_token));
  if (counters) {
    const std::size_t d = s.config.decoder_dim;
    const auto &zv = z.values(), &ov = po.values(), &ev = pe.values(), &tv = s.mask_token.values();
    auto row_eq = [&](const ag::Buffer<T>& a, std::size_t ra, const ag::Buffer<T>& b, std::size_t rb) {
      for (std::size_t j = 0; j < d; ++j) {
        if (a[ra * d + j] != b[rb * d + j]) return false;
      }
      return true;
    };
    for (std::size_t i = 0; i < n; ++i) {
      const bool o = row_eq(zv, i, ov, i), e = row_eq(zv, i, ev, i), t = row_eq(zv, i, tv, 0);
      if (o + e + t != 1) {
        ++counters->mixed;
      } else {
        counters->from_odd += o;
        counters->from_even += e;
        counters->from_token += t;
      }
    }
  }
  return z;
}

template <class T>
Tensor<T> decode(const Tensor<T>& z, const ModelState<T>& s) {
  const ModelConfig& c = s.config;
  if (z.ndim() != 2 || z.dim(0) != c.tokens() || z.dim(1) != c.decoder_dim) {
    throw ShapeError("decode: expected latents [" + std::to_string(c.tokens()) + ", " + std::to_string(c.decoder_dim) +
                     "], got " + ag::to_string(z.shape()));
  }
  Tensor<T> h = ag::add(z, s.pos_dec);
  for (const auto& b : s.decoder) h = block_forward(h, b, c.decoder_heads);
  h = ag::layer_norm(h, s.decoder_norm.g, s.decoder_norm.b);
  const std::size_t g = c.grid();
  h = ag::reshape(ag::transpose(h), {c.decoder_dim, g, g});
  for (std::size_t i = 0; i < 3; ++i) {
    h = ag::conv2d(h, s.neck[i].w, s.neck[i].b);
    if (i < 2) h = ag::gelu(h);
  }
  h = ag::transpose(ag::reshape(h, {c.neck_channels[2], c.tokens()}));
  return linear(h, s.head);
}

template <class T>
struct LossTerm {
  Tensor<T> value;
  bool empty = false;  // no contributing patches
};

/// Mean over pixels of odd-visible patches (target: even) and even-visible
/// patches (target: odd), taken in ascending patch order.
template <class T>
LossTerm<T> n2n_loss(const Tensor<T>& pred, const Tensor<T>& x_odd, const Tensor<T>& x_even, const data::MaskPair& mp) {
  if (pred.shape() != x_odd.shape() || pred.shape() != x_even.shape() || pred.ndim() != 2) {
    throw ShapeError("n2n_loss: prediction and targets must share one [N, p*p] shape");
  }
  if (mp.size() != pred.dim(0)) throw ShapeError("n2n_loss: mask length differs from patch count");
  const std::size_t d = pred.dim(1);
  std::vector<std::size_t> rows;
  std::vector<T> target;
  for (std::size_t i = 0; i < mp.size(); ++i) {
    const Tensor<T>* src = !mp.m_odd[i] ? &x_even : (!mp.m_even[i] ? &x_odd : nullptr);
    if (!src) continue;
    rows.push_back(i);
    const auto& v = src->values();
    target.insert(target.end(), v.begin() + static_cast<std::ptrdiff_t>(i * d),
                  v.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  if (rows.empty()) throw InvalidArgument("n2n_loss: no visible patches");
  const std::size_t k = rows.size();
  return {ag::mse(ag::gather_rows(pred, std::move(rows)), Tensor<T>({k, d}, std::move(target))), false};
}

/// Mean over pixels of both-masked patches; 0 with `empty` set when there are none.
template <class T>
LossTerm<T> recon_loss(const Tensor<T>& pred, const Tensor<T>& x_orig, const data::MaskPair& mp) {
  if (pred.shape() != x_orig.shape() || pred.ndim() != 2) throw ShapeError("recon_loss: shapes differ");
  if (mp.size() != pred.dim(0)) throw ShapeError("recon_loss: mask length differs from patch count");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mp.size(); ++i) {
    if (mp.m_odd[i] && mp.m_even[i]) rows.push_back(i);
  }
  if (rows.empty()) return {Tensor<T>::scalar(T(0)), true};
  const Tensor<T> target = ag::gather_rows(x_orig.detach(), rows);
  return {ag::mse(ag::gather_rows(pred, std::move(rows)), target), false};
}

template <class T>
Tensor<T> total_loss(const Tensor<T>& n2n, const Tensor<T>& recon, double lambda, double n2n_weight = 1.0) {
  if (!(lambda >= 0)) throw InvalidArgument("lambda must be >= 0");
  return ag::add(ag::scale(n2n, static_cast<T>(n2n_weight)), ag::scale(recon, static_cast<T>(lambda)));
}

template <class T>
struct ForwardResult {
  Tensor<T> loss, n2n, recon, pred;
  bool recon_empty = false;
  SelectionCounters selection;
};

/// Inputs are patch tensors of the normalized (original, odd, even) images.
template <class T>
ForwardResult<T> forward_draco(const Tensor<T>& x_orig, const Tensor<T>& x_odd, const Tensor<T>& x_even,
                               const data::MaskPair& mp, const ModelState<T>& s) {
  ForwardResult<T> r;
  const Tensor<T> z = combine_latents(encode(x_odd, mp.m_odd, s), encode(x_even, mp.m_even, s), mp, s, &r.selection);
  r.pred = decode(z, s);
  const double nw = s.config.n2n_weight, lam = s.config.lambda;
  // A zero-weight term is left out of the graph so its edge cases cannot fail the step.
  r.n2n = nw > 0 ? n2n_loss(r.pred, x_odd, x_even, mp).value : Tensor<T>::scalar(T(0));
  if (lam > 0) {
    auto rec = recon_loss(r.pred, x_orig, mp);
    r.recon = rec.value;
    r.recon_empty = rec.empty;
  } else {
    r.recon = Tensor<T>::scalar(T(0));
  }
  r.loss = total_loss(r.n2n, r.recon, lam, nw);
  return r;
}

template <class T>
ForwardResult<T> forward_draco(const data::Triplet& t, const data::MaskPair& mp, const ModelState<T>& s) {
  const std::size_t p = s.config.patch_size;
  return forward_draco(patches_tensor<T>(data::patchify(t.original, p)), patches_tensor<T>(data::patchify(t.odd, p)),
                       patches_tensor<T>(data::patchify(t.even, p)), mp, s);
}

/// MAE-style warm-up: one input (the original) with one mask of ratio gamma;
/// reconstruction loss on its masked patches. This is the combine rule with
/// the second input fully masked.
template <class T>
ForwardResult<T> forward_warmup(const Tensor<T>& x_orig, const std::vector<bool>& mask, const ModelState<T>& s) {
  ForwardResult<T> r;
  const std::size_t n = mask.size();
  std::vector<T> w_vis(n), w_mask(n);
  std::vector<std::size_t> masked;
  for (std::size_t i = 0; i < n; ++i) {
    w_vis[i] = mask[i] ? T(0) : T(1);
    w_mask[i] = mask[i] ? T(1) : T(0);
    if (mask[i]) masked.push_back(i);
  }
  if (masked.empty()) throw InvalidArgument("warm-up mask hides no patch");
  const Tensor<T> z = ag::add(ag::scale_rows(project_latents(encode(x_orig, mask, s), s), std::move(w_vis)),
                              ag::matmul(Tensor<T>({n, 1}, std::move(w_mask)), s.mask_token));
  r.pred = decode(z, s);
  const Tensor<T> target = ag::gather_rows(x_orig.detach(), masked);
  r.recon = ag::mse(ag::gather_rows(r.pred, std::move(masked)), target);
  r.n2n = Tensor<T>::scalar(T(0));
  r.loss = r.recon;
  return r;
}

/// Mean-pooled encoder output with every patch visible.
template <class T>
std::vector<T> encoder_features(const Image& micrograph, const ModelState<T>& s) {
  ag::NoGradGuard guard;
  const Tensor<T> x = patches_tensor<T>(data::patchify(micrograph, s.config.patch_size));
  const Tensor<T> f = ag::mean_rows(encode(x, std::vector<bool>(s.config.tokens(), false), s));
  return {f.values().begin(), f.values().end()};
}

}  // namespace draco::model
