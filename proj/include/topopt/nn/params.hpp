// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>

#include "topopt/nn/tensor.hpp"

namespace topopt::nn {

/// A trainable tensor with its gradient accumulator and Adam moments.
/// Buffers (trainable == false) hold state such as BN running statistics.
template <class T>
struct Param {
  Tensor<T> value, grad, m, v;
  bool trainable = true;
};

/// Named parameters of one model. std::map keeps references stable while
/// layers register themselves, and gives a fixed iteration order.
template <class T>
class ParamSet {
 public:
  Param<T>& add(const std::string& name, const Shape& shape, bool trainable = true) {
    TOPOPT_REQUIRE(!params_.count(name), ErrorKind::InvalidArgument, "duplicate parameter '" + name + "'");
    auto& p = params_[name];
    p.value = Tensor<T>(shape);
    p.grad = Tensor<T>(shape);
    p.m = Tensor<T>(shape);
    p.v = Tensor<T>(shape);
    p.trainable = trainable;
    return p;
  }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    TOPOPT_REQUIRE(it != params_.end(), ErrorKind::MissingWeights, "no parameter '" + name + "'");
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    TOPOPT_REQUIRE(it != params_.end(), ErrorKind::MissingWeights, "no parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grad() {
    for (auto& [n, p] : params_) p.grad.fill(T(0));
  }

  std::size_t count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_)
      if (p.trainable || !trainable_only) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  long step = 0;  // Adam step counter

  /// Copies values (not gradients or moments) from `other`, casting the scalar type.
  template <class U>
  void copy_values_from(const ParamSet<U>& other) {
    for (auto& [name, p] : params_) {
      const auto& src = other.at(name);
      TOPOPT_REQUIRE(src.value.shape == p.value.shape, ErrorKind::ShapeMismatch, "parameter '" + name + "' shape differs");
      p.value = src.value.template cast<T>();
    }
  }

 private:
  std::map<std::string, Param<T>> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam on every trainable parameter; increments the step counter.
template <class T>
void adam_step(ParamSet<T>& ps, const AdamConfig& cfg) {
  ++ps.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(ps.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(ps.step));
  for (auto& [name, p] : ps) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double m = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
      p.m[i] = static_cast<T>(m);
      p.v[i] = static_cast<T>(v);
      p.value[i] = static_cast<T>(p.value[i] - cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps));
    }
  }
}

using InitRng = std::mt19937_64;

/// He-uniform: U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)).
template <class T>
void he_uniform(Tensor<T>& t, int fan_in, InitRng& rng) {
  const double b = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> ud(-b, b);
  for (auto& x : t.data) x = static_cast<T>(ud(rng));
}

template <class T>
void uniform_init(Tensor<T>& t, double bound, InitRng& rng) {
  std::uniform_real_distribution<double> ud(-bound, bound);
  for (auto& x : t.data) x = static_cast<T>(ud(rng));
}

}  // namespace topopt::nn
