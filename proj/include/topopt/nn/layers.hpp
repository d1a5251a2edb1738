// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "topopt/nn/ops.hpp"
#include "topopt/nn/params.hpp"

namespace topopt::nn {

/// Forward-pass flags. `train` selects batch statistics in BN; `record`
/// keeps what backward() needs. Layers keep LIFO caches, so one layer can be
/// applied several times (time steps) and back-propagated in reverse order.
struct Ctx {
  bool train = false;
  bool record = false;
  static Ctx training() { return {true, true}; }
  static Ctx inference() { return {false, false}; }
};

template <class T>
T pop(std::vector<T>& stack) {
  TOPOPT_REQUIRE(!stack.empty(), ErrorKind::InvalidArgument, "backward called without a recorded forward");
  T v = std::move(stack.back());
  stack.pop_back();
  return v;
}

template <class T>
class Conv {
 public:
  Conv() = default;
  Conv(ParamSet<T>& ps, const std::string& name, int dims, int cin, int cout, int k, InitRng& rng, int stride = 1,
       int pad = -1)
      : stride_(stride), pad_(pad < 0 ? k / 2 : pad) {
    Shape ws{cout, cin, k, k};
    if (dims == 3) ws.push_back(k);
    w_ = &ps.add(name + ".w", ws);
    b_ = &ps.add(name + ".b", {cout});
    he_uniform(w_->value, static_cast<int>(numel(ws) / static_cast<std::size_t>(cout)), rng);
  }
  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    if (ctx.record) xs_.push_back(x);
    return conv_forward(x, w_->value, b_->value, stride_, pad_);
  }
  Tensor<T> backward(const Tensor<T>& gy, bool need_gx = true) {
    const auto x = pop(xs_);
    Tensor<T> gx;
    conv_backward(x, w_->value, gy, stride_, pad_, need_gx ? &gx : nullptr, w_->grad, b_->grad);
    return gx;
  }
  Param<T>& weight() { return *w_; }
  Param<T>& bias() { return *b_; }
  void clear() { xs_.clear(); }

 private:
  Param<T>* w_ = nullptr;
  Param<T>* b_ = nullptr;
  int stride_ = 1, pad_ = 0;
  std::vector<Tensor<T>> xs_;
};

/// Transposed convolution, kernel k, stride k: exact inverse shape of a k-pool.
template <class T>
class Deconv {
 public:
  Deconv() = default;
  Deconv(ParamSet<T>& ps, const std::string& name, int dims, int cin, int cout, int k, InitRng& rng)
      : k_(k) {
    Shape ws{cin, cout, k, k};
    if (dims == 3) ws.push_back(k);
    w_ = &ps.add(name + ".w", ws);
    b_ = &ps.add(name + ".b", {cout});
    he_uniform(w_->value, static_cast<int>(numel(ws) / static_cast<std::size_t>(cout)), rng);
  }
  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    if (ctx.record) xs_.push_back(x);
    return deconv_forward(x, w_->value, b_->value, k_, 0);
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    const auto x = pop(xs_);
    Tensor<T> gx;
    deconv_backward(x, w_->value, gy, k_, 0, &gx, w_->grad, b_->grad);
    return gx;
  }
  void clear() { xs_.clear(); }

 private:
  Param<T>* w_ = nullptr;
  Param<T>* b_ = nullptr;
  int k_ = 2;
  std::vector<Tensor<T>> xs_;
};

template <class T>
class Dense {
 public:
  Dense() = default;
  Dense(ParamSet<T>& ps, const std::string& name, int in, int out, InitRng& rng) : in_(in), out_(out) {
    w_ = &ps.add(name + ".w", {out, in});
    b_ = &ps.add(name + ".b", {out});
    he_uniform(w_->value, in, rng);
  }
  /// x: (N, in) -> (N, out)
  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    TOPOPT_REQUIRE(x.dim() == 2 && x(1) == in_, ErrorKind::ShapeMismatch, "dense input " + shape_str(x.shape));
    if (ctx.record) xs_.push_back(x);
    Tensor<T> y({x(0), out_});
    MatMap<T> ym(y.ptr(), x(0), out_);
    ym.noalias() = ConstMatMap<T>(x.ptr(), x(0), in_) * ConstMatMap<T>(w_->value.ptr(), out_, in_).transpose();
    for (int n = 0; n < x(0); ++n)
      for (int o = 0; o < out_; ++o) ym(n, o) += b_->value[static_cast<std::size_t>(o)];
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    const auto x = pop(xs_);
    const ConstMatMap<T> gym(gy.ptr(), x(0), out_);
    MatMap<T>(w_->grad.ptr(), out_, in_).noalias() += gym.transpose() * ConstMatMap<T>(x.ptr(), x(0), in_);
    for (int n = 0; n < x(0); ++n)
      for (int o = 0; o < out_; ++o) b_->grad[static_cast<std::size_t>(o)] += gym(n, o);
    Tensor<T> gx(x.shape);
    MatMap<T>(gx.ptr(), x(0), in_).noalias() = gym * ConstMatMap<T>(w_->value.ptr(), out_, in_);
    return gx;
  }
  Param<T>& weight() { return *w_; }
  Param<T>& bias() { return *b_; }
  void clear() { xs_.clear(); }

 private:
  Param<T>* w_ = nullptr;
  Param<T>* b_ = nullptr;
  int in_ = 0, out_ = 0;
  std::vector<Tensor<T>> xs_;
};

/// Per-channel batch normalisation over (N, spatial).
template <class T>
class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.9;

  BatchNorm() = default;
  BatchNorm(ParamSet<T>& ps, const std::string& name, int channels) : c_(channels) {
    gamma_ = &ps.add(name + ".gamma", {channels});
    beta_ = &ps.add(name + ".beta", {channels});
    mean_ = &ps.add(name + ".running_mean", {channels}, false);
    var_ = &ps.add(name + ".running_var", {channels}, false);
    gamma_->value.fill(T(1));
    var_->value.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    TOPOPT_REQUIRE(x.dim() >= 2 && x(1) == c_, ErrorKind::ShapeMismatch, "batchnorm channel mismatch");
    const int n = x(0);
    const std::size_t S = x.spatial_size();
    Tensor<T> y(x.shape);
    Cache cache;
    cache.train = ctx.train;
    cache.inv_std.assign(static_cast<std::size_t>(c_), 0.0);
    if (ctx.train) {
      TOPOPT_REQUIRE(n >= 2, ErrorKind::DegenerateBatch, "batchnorm needs a batch of at least 2 in train mode");
      cache.xhat = Tensor<T>(x.shape);
      const double m = double(n) * double(S);
      for (int c = 0; c < c_; ++c) {
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
          const T* p = x.ptr() + (static_cast<std::size_t>(i) * c_ + c) * S;
          for (std::size_t s = 0; s < S; ++s) sum += p[s];
        }
        const double mean = sum / m;
        double sq = 0.0;
        for (int i = 0; i < n; ++i) {
          const T* p = x.ptr() + (static_cast<std::size_t>(i) * c_ + c) * S;
          for (std::size_t s = 0; s < S; ++s) sq += (p[s] - mean) * (p[s] - mean);
        }
        const double var = sq / m;
        const double inv = 1.0 / std::sqrt(var + kEps);
        cache.inv_std[static_cast<std::size_t>(c)] = inv;
        const double g = gamma_->value[static_cast<std::size_t>(c)], b = beta_->value[static_cast<std::size_t>(c)];
        for (int i = 0; i < n; ++i) {
          const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * S;
          for (std::size_t s = 0; s < S; ++s) {
            const double xh = (x[off + s] - mean) * inv;
            cache.xhat[off + s] = static_cast<T>(xh);
            y[off + s] = static_cast<T>(g * xh + b);
          }
        }
        if (!ctx.record) continue;  // measurement passes leave the buffers alone
        auto& rm = mean_->value[static_cast<std::size_t>(c)];
        auto& rv = var_->value[static_cast<std::size_t>(c)];
        rm = static_cast<T>(kMomentum * rm + (1.0 - kMomentum) * mean);
        rv = static_cast<T>(kMomentum * rv + (1.0 - kMomentum) * var * m / std::max(1.0, m - 1.0));
      }
    } else {
      for (int c = 0; c < c_; ++c) {
        const double inv = 1.0 / std::sqrt(double(var_->value[static_cast<std::size_t>(c)]) + kEps);
        const double mean = mean_->value[static_cast<std::size_t>(c)];
        cache.inv_std[static_cast<std::size_t>(c)] = inv;
        const double g = gamma_->value[static_cast<std::size_t>(c)], b = beta_->value[static_cast<std::size_t>(c)];
        for (int i = 0; i < n; ++i) {
          const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * S;
          for (std::size_t s = 0; s < S; ++s) y[off + s] = static_cast<T>(g * (x[off + s] - mean) * inv + b);
        }
      }
      if (ctx.record) cache.x = x;
    }
    if (ctx.record) caches_.push_back(std::move(cache));
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    auto cache = pop(caches_);
    const int n = gy(0);
    const std::size_t S = gy.spatial_size();
    Tensor<T> gx(gy.shape);
    const double m = double(n) * double(S);
    for (int c = 0; c < c_; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      const double g = gamma_->value[cu], inv = cache.inv_std[cu];
      if (!cache.train) {
        const double mean = mean_->value[cu];
        for (int i = 0; i < n; ++i) {
          const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * S;
          for (std::size_t s = 0; s < S; ++s) {
            gamma_->grad[cu] += static_cast<T>(gy[off + s] * (cache.x[off + s] - mean) * inv);
            beta_->grad[cu] += gy[off + s];
            gx[off + s] = static_cast<T>(gy[off + s] * g * inv);
          }
        }
        continue;
      }
      double sum_g = 0.0, sum_gx = 0.0;
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * S;
        for (std::size_t s = 0; s < S; ++s) {
          sum_g += gy[off + s];
          sum_gx += double(gy[off + s]) * cache.xhat[off + s];
        }
      }
      gamma_->grad[cu] += static_cast<T>(sum_gx);
      beta_->grad[cu] += static_cast<T>(sum_g);
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * S;
        for (std::size_t s = 0; s < S; ++s)
          gx[off + s] = static_cast<T>(g * inv / m * (m * gy[off + s] - sum_g - cache.xhat[off + s] * sum_gx));
      }
    }
    return gx;
  }

  Param<T>& gamma() { return *gamma_; }
  Param<T>& beta() { return *beta_; }
  Param<T>& running_mean() { return *mean_; }
  Param<T>& running_var() { return *var_; }
  void clear() { caches_.clear(); }

 private:
  struct Cache {
    bool train = true;
    Tensor<T> xhat, x;
    std::vector<double> inv_std;
  };
  int c_ = 0;
  Param<T>*gamma_ = nullptr, *beta_ = nullptr, *mean_ = nullptr, *var_ = nullptr;
  std::vector<Cache> caches_;
};

template <class T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    if (ctx.record) xs_.push_back(x);
    return relu_forward(x);
  }
  Tensor<T> backward(const Tensor<T>& gy) { return relu_backward(pop(xs_), gy); }
  void clear() { xs_.clear(); }

 private:
  std::vector<Tensor<T>> xs_;
};

template <class T>
class Sigmoid {
 public:
  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    auto y = sigmoid_forward(x);
    if (ctx.record) ys_.push_back(y);
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) { return sigmoid_backward(pop(ys_), gy); }
  void clear() { ys_.clear(); }

 private:
  std::vector<Tensor<T>> ys_;
};

template <class T>
class MaxPool {
 public:
  explicit MaxPool(int s = 2) : s_(s) {}
  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    std::vector<std::size_t> arg;
    auto y = maxpool_forward(x, s_, arg);
    if (ctx.record) caches_.push_back({x.shape, std::move(arg)});
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    auto c = pop(caches_);
    return maxpool_backward(c.first, gy, c.second);
  }
  void clear() { caches_.clear(); }

 private:
  int s_;
  std::vector<std::pair<Shape, std::vector<std::size_t>>> caches_;
};

template <class T>
class Upsample {
 public:
  explicit Upsample(int s = 2) : s_(s) {}
  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    if (ctx.record) shapes_.push_back(x.shape);
    return upsample_forward(x, s_);
  }
  Tensor<T> backward(const Tensor<T>& gy) { return upsample_backward(pop(shapes_), gy, s_); }
  void clear() { shapes_.clear(); }

 private:
  int s_;
  std::vector<Shape> shapes_;
};

/// Squeeze-and-excitation: channel means -> FC -> ReLU -> FC -> sigmoid -> rescale.
template <class T>
class SEGate {
 public:
  SEGate() = default;
  SEGate(ParamSet<T>& ps, const std::string& name, int channels, int reduction, InitRng& rng) : c_(channels) {
    TOPOPT_REQUIRE(reduction >= 1 && channels % reduction == 0, ErrorKind::ShapeMismatch,
                   "SE channels must be divisible by the reduction ratio");
    fc1_ = Dense<T>(ps, name + ".fc1", channels, channels / reduction, rng);
    fc2_ = Dense<T>(ps, name + ".fc2", channels / reduction, channels, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    TOPOPT_REQUIRE(x.dim() >= 3 && x(1) == c_, ErrorKind::ShapeMismatch, "SE channel mismatch");
    const int n = x(0);
    const std::size_t S = x.spatial_size();
    Tensor<T> pooled({n, c_});
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < c_; ++c) {
        double s = 0.0;
        const T* p = x.ptr() + (static_cast<std::size_t>(i) * c_ + c) * S;
        for (std::size_t k = 0; k < S; ++k) s += p[k];
        pooled[static_cast<std::size_t>(i * c_ + c)] = static_cast<T>(s / double(S));
      }
    const auto z = relu_.forward(fc1_.forward(pooled, ctx), ctx);
    const auto a = sig_.forward(fc2_.forward(z, ctx), ctx);
    Tensor<T> y(x.shape);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < c_; ++c) {
        const T g = a[static_cast<std::size_t>(i * c_ + c)];
        const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * S;
        for (std::size_t k = 0; k < S; ++k) y[off + k] = x[off + k] * g;
      }
    if (ctx.record) caches_.push_back({x, a});
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    auto [x, a] = pop(caches_);
    const int n = x(0);
    const std::size_t S = x.spatial_size();
    Tensor<T> gx(x.shape), ga({n, c_});
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < c_; ++c) {
        const T g = a[static_cast<std::size_t>(i * c_ + c)];
        const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * S;
        double acc = 0.0;
        for (std::size_t k = 0; k < S; ++k) {
          gx[off + k] = gy[off + k] * g;
          acc += double(gy[off + k]) * x[off + k];
        }
        ga[static_cast<std::size_t>(i * c_ + c)] = static_cast<T>(acc);
      }
    const auto gpooled = fc1_.backward(relu_.backward(fc2_.backward(sig_.backward(ga))));
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < c_; ++c) {
        const T g = static_cast<T>(gpooled[static_cast<std::size_t>(i * c_ + c)] / double(S));
        const std::size_t off = (static_cast<std::size_t>(i) * c_ + c) * S;
        for (std::size_t k = 0; k < S; ++k) gx[off + k] += g;
      }
    return gx;
  }

  Dense<T>& fc1() { return fc1_; }
  Dense<T>& fc2() { return fc2_; }
  void clear() {
    caches_.clear();
    fc1_.clear();
    fc2_.clear();
    relu_.clear();
    sig_.clear();
  }

 private:
  int c_ = 0;
  Dense<T> fc1_, fc2_;
  ReLU<T> relu_;
  Sigmoid<T> sig_;
  std::vector<std::pair<Tensor<T>, Tensor<T>>> caches_;
};

/// Single LSTM cell, gates ordered i, f, g, o:
///   c = f * c_prev + i * g,  h = o * tanh(c).
template <class T>
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ParamSet<T>& ps, const std::string& name, int in, int hidden, InitRng& rng) : in_(in), h_(hidden) {
    wx_ = &ps.add(name + ".wx", {4 * hidden, in});
    wh_ = &ps.add(name + ".wh", {4 * hidden, hidden});
    b_ = &ps.add(name + ".b", {4 * hidden});
    const double bound = 1.0 / std::sqrt(double(hidden));
    uniform_init(wx_->value, bound, rng);
    uniform_init(wh_->value, bound, rng);
    uniform_init(b_->value, bound, rng);
  }

  int hidden() const { return h_; }

  /// x (N, in), h and c (N, hidden) -> new (h, c).
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& x, const Tensor<T>& h, const Tensor<T>& c, const Ctx& ctx) {
    const int n = x(0);
    TOPOPT_REQUIRE(x.dim() == 2 && x(1) == in_ && h.shape == Shape({n, h_}) && c.shape == h.shape,
                   ErrorKind::ShapeMismatch, "lstm input shapes");
    Tensor<T> gates({n, 4 * h_});
    MatMap<T> gm(gates.ptr(), n, 4 * h_);
    gm.noalias() = ConstMatMap<T>(x.ptr(), n, in_) * ConstMatMap<T>(wx_->value.ptr(), 4 * h_, in_).transpose();
    gm.noalias() += ConstMatMap<T>(h.ptr(), n, h_) * ConstMatMap<T>(wh_->value.ptr(), 4 * h_, h_).transpose();
    Tensor<T> hn({n, h_}), cn({n, h_}), tc({n, h_});
    for (int i = 0; i < n; ++i) {
      T* g = gates.ptr() + static_cast<std::ptrdiff_t>(i) * 4 * h_;
      for (int j = 0; j < 4 * h_; ++j) {
        g[j] += b_->value[static_cast<std::size_t>(j)];
        g[j] = (j >= 2 * h_ && j < 3 * h_) ? std::tanh(g[j]) : sigmoid(g[j]);
      }
      for (int j = 0; j < h_; ++j) {
        const std::size_t k = static_cast<std::size_t>(i * h_ + j);
        cn[k] = g[h_ + j] * c[k] + g[j] * g[2 * h_ + j];
        tc[k] = std::tanh(cn[k]);
        hn[k] = g[3 * h_ + j] * tc[k];
      }
    }
    if (ctx.record) caches_.push_back({x, h, c, gates, tc});
    return {hn, cn};
  }

  struct Grads {
    Tensor<T> dx, dh_prev, dc_prev;
  };

  /// Gradients w.r.t. (x, h_prev, c_prev) given dL/dh and dL/dc of this step.
  Grads backward(const Tensor<T>& dh, const Tensor<T>& dc) {
    auto k = pop(caches_);
    const int n = k.x(0);
    Tensor<T> dgates({n, 4 * h_});
    Grads out{Tensor<T>(k.x.shape), Tensor<T>({n, h_}), Tensor<T>({n, h_})};
    for (int i = 0; i < n; ++i) {
      const T* g = k.gates.ptr() + static_cast<std::ptrdiff_t>(i) * 4 * h_;
      T* dg = dgates.ptr() + static_cast<std::ptrdiff_t>(i) * 4 * h_;
      for (int j = 0; j < h_; ++j) {
        const std::size_t q = static_cast<std::size_t>(i * h_ + j);
        const T gi = g[j], gf = g[h_ + j], gg = g[2 * h_ + j], go = g[3 * h_ + j];
        const T t = k.tc[q];
        const T dct = dc[q] + dh[q] * go * (T(1) - t * t);
        dg[j] = dct * gg * gi * (T(1) - gi);
        dg[h_ + j] = dct * k.c[q] * gf * (T(1) - gf);
        dg[2 * h_ + j] = dct * gi * (T(1) - gg * gg);
        dg[3 * h_ + j] = dh[q] * t * go * (T(1) - go);
        out.dc_prev[q] = dct * gf;
      }
    }
    const ConstMatMap<T> dgm(dgates.ptr(), n, 4 * h_);
    MatMap<T>(wx_->grad.ptr(), 4 * h_, in_).noalias() += dgm.transpose() * ConstMatMap<T>(k.x.ptr(), n, in_);
    MatMap<T>(wh_->grad.ptr(), 4 * h_, h_).noalias() += dgm.transpose() * ConstMatMap<T>(k.h.ptr(), n, h_);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 4 * h_; ++j) b_->grad[static_cast<std::size_t>(j)] += dgm(i, j);
    MatMap<T>(out.dx.ptr(), n, in_).noalias() = dgm * ConstMatMap<T>(wx_->value.ptr(), 4 * h_, in_);
    MatMap<T>(out.dh_prev.ptr(), n, h_).noalias() = dgm * ConstMatMap<T>(wh_->value.ptr(), 4 * h_, h_);
    return out;
  }

  Param<T>& wx() { return *wx_; }
  Param<T>& wh() { return *wh_; }
  Param<T>& bias() { return *b_; }
  void clear() { caches_.clear(); }

 private:
  struct Cache {
    Tensor<T> x, h, c, gates, tc;
  };
  int in_ = 0, h_ = 0;
  Param<T>*wx_ = nullptr, *wh_ = nullptr, *b_ = nullptr;
  std::vector<Cache> caches_;
};

}  // namespace topopt::nn
