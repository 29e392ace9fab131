#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "draco/autograd/tensor.hpp"

// Differentiable primitives. Broadcasting is limited to a right operand whose
// shape is a suffix of the left operand's shape (trailing vector, or a
// leading batch on the left); every other mismatch is a ShapeError.

namespace draco::ag {

namespace detail {

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMajor<T>>;
template <class T>
using MapM = Eigen::Map<RowMajor<T>>;

inline bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <class T>
void require_broadcastable(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw ShapeError(std::string(op) + ": cannot combine shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
}

template <class T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.ndim() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(a.shape()));
  }
}

// Decompose a shape around `axis` into (outer, length, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.length = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_broadcastable(a, b, "add");
  const auto& x = a.values();
  const auto& y = b.values();
  const std::size_t nb = y.size();
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % nb];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [nb](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_broadcastable(a, b, "sub");
  const auto& x = a.values();
  const auto& y = b.values();
  const std::size_t nb = y.size();
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i % nb];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [nb](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_broadcastable(a, b, "mul");
  const auto& x = a.values();
  const auto& y = b.values();
  const std::size_t nb = y.size();
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i % nb];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [nb](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i % nb];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i] * pa.data[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Buffer<T> out(a.values());
  for (auto& v : out) v *= s;
  return make_result<T>(a.shape(), std::move(out), {a}, [s](detail::Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Buffer<T> out(a.values());
  for (auto& v : out) v += s;
  return make_result<T>(a.shape(), std::move(out), {a}, [](detail::Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

/// Multiplies row i of a rank-2 tensor by the constant weights[i].
template <class T>
Tensor<T> scale_rows(const Tensor<T>& a, std::vector<T> weights) {
  detail::require_rank(a, 2, "scale_rows");
  if (weights.size() != a.dim(0)) throw ShapeError("scale_rows: weight count differs from row count");
  const std::size_t cols = a.dim(1);
  Buffer<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= weights[i / cols];
  return make_result<T>(a.shape(), std::move(out), {a}, [cols, w = std::move(weights)](detail::Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i / cols] * self.grad[i];
  });
}

/// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  Buffer<T> out(a.numel());
  const auto& x = a.values();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  return make_result<T>(a.shape(), std::move(out), {a}, [](detail::Node<T>& self) {
    constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
    auto& p = *self.parents[0];
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p.data[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------- linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer<T> out(m * n);
  detail::MapM<T>(out.data(), m, n).noalias() = detail::MapC<T>(a.data().data(), m, k) *
                                                detail::MapC<T>(b.data().data(), k, n);
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    detail::MapC<T> dc(self.grad.data(), m, n);
    if (pa.requires_grad) {
      detail::MapM<T>(pa.grad_buffer().data(), m, k).noalias() += dc * detail::MapC<T>(pb.data.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      detail::MapM<T>(pb.grad_buffer().data(), k, n).noalias() += detail::MapC<T>(pa.data.data(), m, k).transpose() * dc;
    }
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Buffer<T> out(r * c);
  detail::MapM<T>(out.data(), c, r) = detail::MapC<T>(a.data().data(), r, c).transpose();
  return make_result<T>({c, r}, std::move(out), {a}, [r, c](detail::Node<T>& self) {
    detail::MapM<T>(self.parents[0]->grad_buffer().data(), r, c) += detail::MapC<T>(self.grad.data(), c, r).transpose();
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " cannot become " + to_string(shape));
  }
  return make_result<T>(std::move(shape), a.values(), {a}, [](detail::Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Joins tensors along `axis`; all other dimensions must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + to_string(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != ref[d]) {
        throw ShapeError("concat: shapes " + to_string(ref) + " and " + to_string(s) + " disagree off-axis");
      }
    }
    out_shape[axis] += s[axis];
  }
  const auto split = detail::split_axis(out_shape, axis);
  Buffer<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.shape()[axis];
    const auto& src = p.values();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * len * split.inner), len * split.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * split.length + offset) * split.inner));
    }
    offset += len;
  }
  return make_result<T>(out_shape, std::move(out), parts, [split, offsets, axis](detail::Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const std::size_t len = p.shape[axis];
      auto g = p.grad_buffer();
      for (std::size_t o = 0; o < split.outer; ++o) {
        const T* src = self.grad.data() + (o * split.length + offsets[k]) * split.inner;
        T* dst = g.data() + o * len * split.inner;
        for (std::size_t i = 0; i < len * split.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

/// Contiguous sub-range [start, start+length) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.ndim()) throw ShapeError("slice: axis out of range for " + to_string(a.shape()));
  if (start + length > a.dim(axis)) throw ShapeError("slice: range exceeds dimension in " + to_string(a.shape()));
  const auto split = detail::split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  Buffer<T> out(numel(out_shape));
  const auto& src = a.values();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((o * split.length + start) * split.inner),
                length * split.inner, out.begin() + static_cast<std::ptrdiff_t>(o * length * split.inner));
  }
  return make_result<T>(out_shape, std::move(out), {a}, [split, start, length](detail::Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < split.outer; ++o) {
      T* dst = g.data() + (o * split.length + start) * split.inner;
      const T* src = self.grad.data() + o * length * split.inner;
      for (std::size_t i = 0; i < length * split.inner; ++i) dst[i] += src[i];
    }
  });
}

/// Rows `index` of a rank-2 tensor, in the given order.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::size_t> index) {
  detail::require_rank(a, 2, "gather_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Buffer<T> out(index.size() * cols);
  const auto& src = a.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(index[i] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  const std::size_t count = index.size();
  return make_result<T>({count, cols}, std::move(out), {a}, [cols, idx = std::move(index)](detail::Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < cols; ++c) g[idx[i] * cols + c] += self.grad[i * cols + c];
    }
  });
}

/// Places row i of `a` at row index[i] of a zero [rows, cols] tensor.
template <class T>
Tensor<T> scatter_rows(const Tensor<T>& a, std::vector<std::size_t> index, std::size_t rows) {
  detail::require_rank(a, 2, "scatter_rows");
  if (index.size() != a.dim(0)) throw ShapeError("scatter_rows: index count differs from row count");
  const std::size_t cols = a.dim(1);
  std::vector<bool> used(rows, false);
  Buffer<T> out(rows * cols, T(0));
  const auto& src = a.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw ShapeError("scatter_rows: index " + std::to_string(index[i]) + " out of range");
    if (used[index[i]]) throw ShapeError("scatter_rows: duplicate index " + std::to_string(index[i]));
    used[index[i]] = true;
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(index[i] * cols));
  }
  return make_result<T>({rows, cols}, std::move(out), {a}, [cols, idx = std::move(index)](detail::Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < cols; ++c) g[i * cols + c] += self.grad[idx[i] * cols + c];
    }
  });
}

// ---------------------------------------------------------------- normalization

/// Max-stabilized softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  if (axis >= a.ndim()) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + to_string(a.shape()));
  const auto split = detail::split_axis(a.shape(), axis);
  const auto& x = a.values();
  Buffer<T> out(x.size());
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t in = 0; in < split.inner; ++in) {
      const std::size_t base = o * split.length * split.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < split.length; ++l) mx = std::max(mx, x[base + l * split.inner]);
      double denom = 0.0;
      for (std::size_t l = 0; l < split.length; ++l) {
        const T e = std::exp(x[base + l * split.inner] - mx);
        out[base + l * split.inner] = e;
        denom += e;
      }
      const T inv = static_cast<T>(1.0 / denom);
      for (std::size_t l = 0; l < split.length; ++l) out[base + l * split.inner] *= inv;
    }
  }
  return make_result<T>(a.shape(), std::move(out), {a}, [split](detail::Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    const auto& y = self.data;
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t in = 0; in < split.inner; ++in) {
        const std::size_t base = o * split.length * split.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < split.length; ++l) {
          const std::size_t i = base + l * split.inner;
          dot += static_cast<double>(self.grad[i]) * y[i];
        }
        for (std::size_t l = 0; l < split.length; ++l) {
          const std::size_t i = base + l * split.inner;
          g[i] += y[i] * (self.grad[i] - static_cast<T>(dot));
        }
      }
    }
  });
}

/// Normalizes each slice along the last axis, then applies gain and bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  if (x.ndim() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "], got " +
                     to_string(gain.shape()) + " and " + to_string(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto& v = x.values();
  Buffer<T> xhat(v.size());
  Buffer<T> rstd(rows);
  Buffer<T> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += v[r * d + c];
    const double mean = s / static_cast<double>(d);
    double ss = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = v[r * d + c] - mean;
      ss += dv * dv;
    }
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + static_cast<double>(eps));
    rstd[r] = static_cast<T>(inv);
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = r * d + c;
      xhat[i] = static_cast<T>((v[i] - mean) * inv);
      out[i] = xhat[i] * gain.data()[c] + bias.data()[c];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gain, bias},
                        [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (pg.requires_grad || pb.requires_grad) {
      std::vector<double> dg(d, 0.0), db(d, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          dg[c] += static_cast<double>(self.grad[r * d + c]) * xhat[r * d + c];
          db[c] += self.grad[r * d + c];
        }
      }
      if (pg.requires_grad) {
        auto g = pg.grad_buffer();
        for (std::size_t c = 0; c < d; ++c) g[c] += static_cast<T>(dg[c]);
      }
      if (pb.requires_grad) {
        auto g = pb.grad_buffer();
        for (std::size_t c = 0; c < d; ++c) g[c] += static_cast<T>(db[c]);
      }
    }
    if (px.requires_grad) {
      auto g = px.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double dxh = static_cast<double>(self.grad[r * d + c]) * pg.data[c];
          m1 += dxh;
          m2 += dxh * xhat[r * d + c];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) {
          const double dxh = static_cast<double>(self.grad[r * d + c]) * pg.data[c];
          g[r * d + c] += static_cast<T>(rstd[r] * (dxh - m1 - xhat[r * d + c] * m2));
        }
      }
    }
  });
}

// ---------------------------------------------------------------- convolution

/// Stride-1, zero-padded ("same") 2D convolution with an odd square kernel.
/// x: [C, H, W], weight: [O, C, k, k], bias: [O] -> [O, H, W].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank(x, 3, "conv2d input");
  detail::require_rank(weight, 4, "conv2d weight");
  const std::size_t c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t c_out = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c_in || weight.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " + to_string(x.shape()));
  }
  if (bias.shape() != Shape{c_out}) throw ShapeError("conv2d: bias must have shape [" + std::to_string(c_out) + "]");
  const std::size_t hw = h * w, ckk = c_in * k * k;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);

  // im2col: cols[(c*k + ky)*k + kx, y*w + x]
  Buffer<T> cols(ckk * hw, T(0));
  const auto& xv = x.values();
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = cols.data() + ((c * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - pad;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            dst[y * w + xx] = xv[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
  Buffer<T> out(c_out * hw);
  detail::MapM<T> om(out.data(), c_out, hw);
  om.noalias() = detail::MapC<T>(weight.data().data(), c_out, ckk) * detail::MapC<T>(cols.data(), ckk, hw);
  for (std::size_t o = 0; o < c_out; ++o) om.row(o).array() += bias.data()[o];

  return make_result<T>({c_out, h, w}, std::move(out), {x, weight, bias},
                        [=, cols = std::move(cols)](detail::Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    detail::MapC<T> dout(self.grad.data(), c_out, hw);
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t o = 0; o < c_out; ++o) g[o] += dout.row(o).sum();
    }
    if (pw.requires_grad) {
      detail::MapM<T>(pw.grad_buffer().data(), c_out, ckk).noalias() +=
          dout * detail::MapC<T>(cols.data(), ckk, hw).transpose();
    }
    if (px.requires_grad) {
      Buffer<T> dcols(ckk * hw);
      detail::MapM<T>(dcols.data(), ckk, hw).noalias() =
          detail::MapC<T>(pw.data.data(), c_out, ckk).transpose() * dout;
      auto g = px.grad_buffer();
      for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T* src = dcols.data() + ((c * k + ky) * k + kx) * hw;
            for (std::size_t y = 0; y < h; ++y) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
              if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t xx = 0; xx < w; ++xx) {
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - pad;
                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                g[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] += src[y * w + xx];
              }
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  double s = 0.0;
  for (T v : a.data()) s += v;
  return make_result<T>({}, {static_cast<T>(s)}, {a}, [](detail::Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  double s = 0.0;
  for (T v : a.data()) s += v;
  const double n = static_cast<double>(a.numel());
  return make_result<T>({}, {static_cast<T>(s / n)}, {a}, [n](detail::Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    const T w = static_cast<T>(1.0 / n) * self.grad[0];
    for (auto& v : g) v += w;
  });
}

/// Column means of a rank-2 tensor: [N, D] -> [D].
template <class T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  detail::require_rank(a, 2, "mean_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (rows == 0) throw ShapeError("mean_rows of empty tensor");
  std::vector<double> acc(cols, 0.0);
  const auto& v = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) acc[c] += v[r * cols + c];
  }
  Buffer<T> out(cols);
  for (std::size_t c = 0; c < cols; ++c) out[c] = static_cast<T>(acc[c] / static_cast<double>(rows));
  return make_result<T>({cols}, std::move(out), {a}, [rows, cols](detail::Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    const T inv = T(1) / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[c] * inv;
    }
  });
}

/// Mean squared error; the target is treated as a constant.
template <class T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse: shapes " + to_string(pred.shape()) + " and " + to_string(target.shape()) + " differ");
  }
  if (target.requires_grad()) throw GraphError("mse: target must not require a gradient");
  if (pred.numel() == 0) throw ShapeError("mse of empty tensors");
  const auto& p = pred.values();
  const auto& t = target.values();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    s += d * d;
  }
  const double n = static_cast<double>(p.size());
  return make_result<T>({}, {static_cast<T>(s / n)}, {pred},
                        [n, tv = Buffer<T>(t)](detail::Node<T>& self) {
    auto& pp = *self.parents[0];
    auto g = pp.grad_buffer();
    const T w = static_cast<T>(2.0 / n) * self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w * (pp.data[i] - tv[i]);
  });
}

}  // namespace draco::ag
