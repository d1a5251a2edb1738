// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "topopt/nn/tensor.hpp"

namespace topopt::nn {

/// Signature of the active linear pieces (ReLU signs, pool argmax) seen while
/// enabled. gradient_check compares it across +-h to spot kink crossings.
struct BranchTrace {
  bool enabled = false;
  std::uint64_t hash = 1469598103934665603ULL;
  void mix(std::uint64_t v) { hash = (hash ^ v) * 1099511628211ULL; }
};

inline BranchTrace& branch_trace() {
  thread_local BranchTrace t;
  return t;
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Spatial extent (D, H, W) of an N,C,... tensor; 2D tensors have D = 1.
inline std::array<int, 3> spatial_dims(const Shape& s) {
  TOPOPT_REQUIRE(s.size() == 4 || s.size() == 5, ErrorKind::ShapeMismatch,
                 "expected an N,C,H,W or N,C,D,H,W tensor, got " + shape_str(s));
  if (s.size() == 4) return {1, s[2], s[3]};
  return {s[2], s[3], s[4]};
}

inline Shape with_spatial(const Shape& like, int n, int c, const std::array<int, 3>& sp) {
  if (like.size() == 4) return {n, c, sp[1], sp[2]};
  return {n, c, sp[0], sp[1], sp[2]};
}

/// Geometry of one cross-correlation; in 2D the depth axis is trivial.
struct ConvGeom {
  int c = 0;
  std::array<int, 3> in{1, 1, 1}, k{1, 1, 1}, stride{1, 1, 1}, pad{0, 0, 0}, out{1, 1, 1};

  int K() const { return c * k[0] * k[1] * k[2]; }
  int P() const { return out[0] * out[1] * out[2]; }
  int in_size() const { return c * in[0] * in[1] * in[2]; }

  static ConvGeom make(int channels, const std::array<int, 3>& in, int ksize, int stride, int pad, bool is3d) {
    ConvGeom g;
    g.c = channels;
    g.in = in;
    g.k = {is3d ? ksize : 1, ksize, ksize};
    g.stride = {is3d ? stride : 1, stride, stride};
    g.pad = {is3d ? pad : 0, pad, pad};
    for (int a = 0; a < 3; ++a) {
      const int span = in[a] + 2 * g.pad[a] - g.k[a];
      TOPOPT_REQUIRE(span >= 0 && span % g.stride[a] == 0, ErrorKind::ShapeMismatch,
                     "convolution window does not tile the input");
      g.out[a] = span / g.stride[a] + 1;
    }
    return g;
  }
  bool pointwise() const {
    return k == std::array<int, 3>{1, 1, 1} && stride == std::array<int, 3>{1, 1, 1} && pad == std::array<int, 3>{0, 0, 0};
  }
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const int P = g.P();
  for (int c = 0; c < g.c; ++c)
    for (int kz = 0; kz < g.k[0]; ++kz)
      for (int ky = 0; ky < g.k[1]; ++ky)
        for (int kx = 0; kx < g.k[2]; ++kx) {
          const int r = ((c * g.k[0] + kz) * g.k[1] + ky) * g.k[2] + kx;
          T* row = cols + static_cast<std::ptrdiff_t>(r) * P;
          for (int oz = 0; oz < g.out[0]; ++oz) {
            const int iz = oz * g.stride[0] - g.pad[0] + kz;
            for (int oy = 0; oy < g.out[1]; ++oy) {
              const int iy = oy * g.stride[1] - g.pad[1] + ky;
              T* dst = row + (oz * g.out[1] + oy) * g.out[2];
              if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) {
                std::fill(dst, dst + g.out[2], T(0));
                continue;
              }
              const T* src = x + (static_cast<std::ptrdiff_t>(c * g.in[0] + iz) * g.in[1] + iy) * g.in[2];
              for (int ox = 0; ox < g.out[2]; ++ox) {
                const int ix = ox * g.stride[2] - g.pad[2] + kx;
                dst[ox] = (ix >= 0 && ix < g.in[2]) ? src[ix] : T(0);
              }
            }
          }
        }
}

/// Adjoint of im2col: scatters-adds column entries back into `x`.
template <class T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
  const int P = g.P();
  for (int c = 0; c < g.c; ++c)
    for (int kz = 0; kz < g.k[0]; ++kz)
      for (int ky = 0; ky < g.k[1]; ++ky)
        for (int kx = 0; kx < g.k[2]; ++kx) {
          const int r = ((c * g.k[0] + kz) * g.k[1] + ky) * g.k[2] + kx;
          const T* row = cols + static_cast<std::ptrdiff_t>(r) * P;
          for (int oz = 0; oz < g.out[0]; ++oz) {
            const int iz = oz * g.stride[0] - g.pad[0] + kz;
            if (iz < 0 || iz >= g.in[0]) continue;
            for (int oy = 0; oy < g.out[1]; ++oy) {
              const int iy = oy * g.stride[1] - g.pad[1] + ky;
              if (iy < 0 || iy >= g.in[1]) continue;
              const T* src = row + (oz * g.out[1] + oy) * g.out[2];
              T* dst = x + (static_cast<std::ptrdiff_t>(c * g.in[0] + iz) * g.in[1] + iy) * g.in[2];
              for (int ox = 0; ox < g.out[2]; ++ox) {
                const int ix = ox * g.stride[2] - g.pad[2] + kx;
                if (ix >= 0 && ix < g.in[2]) dst[ix] += src[ox];
              }
            }
          }
        }
}

inline bool is_3d(const Shape& s) { return s.size() == 5; }

/// Kernel (C_out, C_in, k, k[, k]); the kernel rank selects 2D or 3D.
template <class T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  TOPOPT_REQUIRE(w.dim() == x.dim(), ErrorKind::ShapeMismatch, "kernel rank does not match input rank");
  TOPOPT_REQUIRE(w(1) == x(1), ErrorKind::ShapeMismatch,
                 "kernel expects " + std::to_string(w(1)) + " input channels, got " + std::to_string(x(1)));
  return ConvGeom::make(x(1), spatial_dims(x.shape), w(2), stride, pad, is_3d(x.shape));
}

template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  const auto g = conv_geometry(x, w, stride, pad);
  const int n = x(0), cout = w(0), K = g.K(), P = g.P();
  TOPOPT_REQUIRE(b.size() == static_cast<std::size_t>(cout), ErrorKind::ShapeMismatch, "bias length mismatch");
  Tensor<T> y(with_spatial(x.shape, n, cout, g.out));
  Storage<T> cols(g.pointwise() ? 0 : static_cast<std::size_t>(K) * P);
  const ConstMatMap<T> wm(w.ptr(), cout, K);
  for (int i = 0; i < n; ++i) {
    const T* xi = x.ptr() + static_cast<std::ptrdiff_t>(i) * g.in_size();
    if (!g.pointwise()) im2col(xi, g, cols.data());
    const ConstMatMap<T> cm(g.pointwise() ? xi : cols.data(), K, P);
    MatMap<T> ym(y.ptr() + static_cast<std::ptrdiff_t>(i) * cout * P, cout, P);
    ym.noalias() = wm * cm;
    for (int c = 0; c < cout; ++c) ym.row(c).array() += b[static_cast<std::size_t>(c)];
  }
  return y;
}

/// Accumulates kernel/bias gradients; returns the input gradient when `gx` is set.
template <class T>
void conv_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, int stride, int pad,
                   Tensor<T>* gx, Tensor<T>& gw, Tensor<T>& gb) {
  const auto g = conv_geometry(x, w, stride, pad);
  const int n = x(0), cout = w(0), K = g.K(), P = g.P();
  Storage<T> cols(static_cast<std::size_t>(K) * P);
  const ConstMatMap<T> wm(w.ptr(), cout, K);
  MatMap<T> gwm(gw.ptr(), cout, K);
  if (gx) *gx = Tensor<T>(x.shape);
  for (int i = 0; i < n; ++i) {
    const T* xi = x.ptr() + static_cast<std::ptrdiff_t>(i) * g.in_size();
    const ConstMatMap<T> gym(gy.ptr() + static_cast<std::ptrdiff_t>(i) * cout * P, cout, P);
    for (int c = 0; c < cout; ++c) gb[static_cast<std::size_t>(c)] += gym.row(c).sum();
    if (g.pointwise()) {
      gwm.noalias() += gym * ConstMatMap<T>(xi, K, P).transpose();
      if (gx) MatMap<T>(gx->ptr() + static_cast<std::ptrdiff_t>(i) * g.in_size(), K, P).noalias() = wm.transpose() * gym;
      continue;
    }
    im2col(xi, g, cols.data());
    MatMap<T> cm(cols.data(), K, P);
    gwm.noalias() += gym * cm.transpose();
    if (gx) {
      cm.noalias() = wm.transpose() * gym;
      col2im(cols.data(), g, gx->ptr() + static_cast<std::ptrdiff_t>(i) * g.in_size());
    }
  }
}

/// Transposed convolution with kernel (C_in, C_out, k, k[, k]); the output
/// extent is (in - 1) * stride - 2 * pad + k per axis.
template <class T>
ConvGeom deconv_geometry(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  TOPOPT_REQUIRE(w.dim() == x.dim() && w(0) == x(1), ErrorKind::ShapeMismatch, "transposed-conv kernel mismatch");
  const bool d3 = is_3d(x.shape);
  const auto in = spatial_dims(x.shape);
  std::array<int, 3> out{};
  for (int a = 0; a < 3; ++a) out[a] = (a == 0 && !d3) ? 1 : (in[a] - 1) * stride - 2 * pad + w(2);
  // Geometry of the forward conv that maps the output back onto the input.
  auto g = ConvGeom::make(w(1), out, w(2), stride, pad, d3);
  TOPOPT_REQUIRE(g.out == in, ErrorKind::ShapeMismatch, "transposed-conv geometry mismatch");
  return g;
}

template <class T>
Tensor<T> deconv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  const auto g = deconv_geometry(x, w, stride, pad);
  const int n = x(0), cin = x(1), cout = w(1), K = g.K(), P = g.P();
  Tensor<T> y(with_spatial(x.shape, n, cout, g.in));
  Storage<T> cols(static_cast<std::size_t>(K) * P);
  const ConstMatMap<T> wm(w.ptr(), cin, K);
  for (int i = 0; i < n; ++i) {
    MatMap<T> cm(cols.data(), K, P);
    cm.noalias() = wm.transpose() * ConstMatMap<T>(x.ptr() + static_cast<std::ptrdiff_t>(i) * cin * P, cin, P);
    T* yi = y.ptr() + static_cast<std::ptrdiff_t>(i) * g.in_size();
    col2im(cols.data(), g, yi);
    const int S = g.in[0] * g.in[1] * g.in[2];
    for (int c = 0; c < cout; ++c)
      for (int s = 0; s < S; ++s) yi[c * S + s] += b[static_cast<std::size_t>(c)];
  }
  return y;
}

template <class T>
void deconv_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, int stride, int pad,
                     Tensor<T>* gx, Tensor<T>& gw, Tensor<T>& gb) {
  const auto g = deconv_geometry(x, w, stride, pad);
  const int n = x(0), cin = x(1), cout = w(1), K = g.K(), P = g.P();
  const int S = g.in[0] * g.in[1] * g.in[2];
  Storage<T> cols(static_cast<std::size_t>(K) * P);
  const ConstMatMap<T> wm(w.ptr(), cin, K);
  MatMap<T> gwm(gw.ptr(), cin, K);
  if (gx) *gx = Tensor<T>(x.shape);
  for (int i = 0; i < n; ++i) {
    const T* gyi = gy.ptr() + static_cast<std::ptrdiff_t>(i) * g.in_size();
    for (int c = 0; c < cout; ++c)
      for (int s = 0; s < S; ++s) gb[static_cast<std::size_t>(c)] += gyi[c * S + s];
    im2col(gyi, g, cols.data());
    const ConstMatMap<T> cm(cols.data(), K, P);
    gwm.noalias() += ConstMatMap<T>(x.ptr() + static_cast<std::ptrdiff_t>(i) * cin * P, cin, P) * cm.transpose();
    if (gx) MatMap<T>(gx->ptr() + static_cast<std::ptrdiff_t>(i) * cin * P, cin, P).noalias() = wm * cm;
  }
}

/// Non-overlapping max pooling with window `s` (depth window 1 in 2D).
/// Returns the flat input offset of each selected element in `argmax`;
/// ties go to the first element in scan order.
template <class T>
Tensor<T> maxpool_forward(const Tensor<T>& x, int s, std::vector<std::size_t>& argmax) {
  const auto in = spatial_dims(x.shape);
  const bool d3 = is_3d(x.shape);
  const std::array<int, 3> win{d3 ? s : 1, s, s};
  std::array<int, 3> out{};
  for (int a = 0; a < 3; ++a) {
    TOPOPT_REQUIRE(in[a] % win[a] == 0, ErrorKind::ShapeMismatch, "pool window does not divide the input");
    out[a] = in[a] / win[a];
  }
  const int nc = x(0) * x(1);
  Tensor<T> y(with_spatial(x.shape, x(0), x(1), out));
  argmax.assign(y.size(), 0);
  std::size_t o = 0;
  for (int p = 0; p < nc; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * in[0] * in[1] * in[2];
    for (int z = 0; z < out[0]; ++z)
      for (int yy = 0; yy < out[1]; ++yy)
        for (int xx = 0; xx < out[2]; ++xx, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t arg = 0;
          for (int dz = 0; dz < win[0]; ++dz)
            for (int dy = 0; dy < win[1]; ++dy)
              for (int dx = 0; dx < win[2]; ++dx) {
                const std::size_t idx = base + (static_cast<std::size_t>(z * win[0] + dz) * in[1] + yy * win[1] + dy) * in[2] +
                                        xx * win[2] + dx;
                if (x[idx] > best) {
                  best = x[idx];
                  arg = idx;
                }
              }
          y[o] = best;
          argmax[o] = arg;
          if (branch_trace().enabled) branch_trace().mix(arg);
        }
  }
  return y;
}

template <class T>
Tensor<T> maxpool_backward(const Shape& in_shape, const Tensor<T>& gy, const std::vector<std::size_t>& argmax) {
  Tensor<T> gx(in_shape);
  for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
  return gx;
}

/// Nearest-neighbour upsampling by an integer factor (depth untouched in 2D).
template <class T>
Tensor<T> upsample_forward(const Tensor<T>& x, int s) {
  const auto in = spatial_dims(x.shape);
  const bool d3 = is_3d(x.shape);
  const std::array<int, 3> f{d3 ? s : 1, s, s};
  const std::array<int, 3> out{in[0] * f[0], in[1] * f[1], in[2] * f[2]};
  Tensor<T> y(with_spatial(x.shape, x(0), x(1), out));
  const int nc = x(0) * x(1);
  std::size_t o = 0;
  for (int p = 0; p < nc; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * in[0] * in[1] * in[2];
    for (int z = 0; z < out[0]; ++z)
      for (int yy = 0; yy < out[1]; ++yy)
        for (int xx = 0; xx < out[2]; ++xx, ++o)
          y[o] = x[base + (static_cast<std::size_t>(z / f[0]) * in[1] + yy / f[1]) * in[2] + xx / f[2]];
  }
  return y;
}

template <class T>
Tensor<T> upsample_backward(const Shape& in_shape, const Tensor<T>& gy, int s) {
  Tensor<T> gx(in_shape);
  const auto in = spatial_dims(in_shape);
  const bool d3 = in_shape.size() == 5;
  const std::array<int, 3> f{d3 ? s : 1, s, s};
  const std::array<int, 3> out{in[0] * f[0], in[1] * f[1], in[2] * f[2]};
  const int nc = in_shape[0] * in_shape[1];
  std::size_t o = 0;
  for (int p = 0; p < nc; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * in[0] * in[1] * in[2];
    for (int z = 0; z < out[0]; ++z)
      for (int yy = 0; yy < out[1]; ++yy)
        for (int xx = 0; xx < out[2]; ++xx, ++o)
          gx[base + (static_cast<std::size_t>(z / f[0]) * in[1] + yy / f[1]) * in[2] + xx / f[2]] += gy[o];
  }
  return gx;
}

// ---- elementwise ----

template <class T>
T sigmoid(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (branch_trace().enabled) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      word = (word << 1) | (x[i] > T(0) ? 1u : 0u);
      if (i % 64 == 63) branch_trace().mix(word), word = 0;
    }
    branch_trace().mix(word);
  }
  return y;
}
template <class T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  Tensor<T> gx(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
  return gx;
}
template <class T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}
/// Gradient through sigmoid given its output y.
template <class T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& gy) {
  Tensor<T> gx(y.shape);
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] = gy[i] * y[i] * (T(1) - y[i]);
  return gx;
}
template <class T>
Tensor<T> tanh_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}
template <class T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& gy) {
  Tensor<T> gx(y.shape);
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] = gy[i] * (T(1) - y[i] * y[i]);
  return gx;
}

// ---- channel concat ----

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  TOPOPT_REQUIRE(a.dim() == b.dim() && a(0) == b(0) && a.spatial_size() == b.spatial_size(), ErrorKind::ShapeMismatch,
                 "concat: incompatible shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
  Shape s = a.shape;
  s[1] = a(1) + b(1);
  Tensor<T> y(s);
  const std::size_t ia = a.item_size(), ib = b.item_size();
  for (int n = 0; n < a(0); ++n) {
    std::copy_n(a.ptr() + n * ia, ia, y.ptr() + n * (ia + ib));
    std::copy_n(b.ptr() + n * ib, ib, y.ptr() + n * (ia + ib) + ia);
  }
  return y;
}

/// Splits a channel-concatenated gradient back into its two parts.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int ca) {
  Shape sa = g.shape, sb = g.shape;
  sa[1] = ca;
  sb[1] = g(1) - ca;
  Tensor<T> a(sa), b(sb);
  const std::size_t ia = a.item_size(), ib = b.item_size();
  for (int n = 0; n < g(0); ++n) {
    std::copy_n(g.ptr() + n * (ia + ib), ia, a.ptr() + n * ia);
    std::copy_n(g.ptr() + n * (ia + ib) + ia, ib, b.ptr() + n * ib);
  }
  return {a, b};
}

}  // namespace topopt::nn
