// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>

#include "topopt/nn/tensor.hpp"

namespace topopt::nn {

/// Scalar loss value plus dL/dpred (same shape as pred).
template <class T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;
};

constexpr double kBceClamp = 1e-7;

template <class T>
LossResult<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "mse");
  const double n = static_cast<double>(pred.size());
  LossResult<T> r{0.0, Tensor<T>(pred.shape)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = double(pred[i]) - double(target[i]);
    r.value += d * d;
    r.grad[i] = static_cast<T>(2.0 * d / n);
  }
  r.value /= n;
  return r;
}

/// Subgradient 0 where pred == target.
template <class T>
LossResult<T> mae(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "mae");
  const double n = static_cast<double>(pred.size());
  LossResult<T> r{0.0, Tensor<T>(pred.shape)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = double(pred[i]) - double(target[i]);
    r.value += std::abs(d);
    r.grad[i] = static_cast<T>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / n);
  }
  r.value /= n;
  return r;
}

/// -mean[t ln p + (1 - t) ln(1 - p)], p clamped to [1e-7, 1 - 1e-7].
/// Gradient is zero where the clamp is active.
template <class T>
LossResult<T> bce(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "bce");
  const double n = static_cast<double>(pred.size());
  LossResult<T> r{0.0, Tensor<T>(pred.shape)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double raw = pred[i];
    const double p = std::clamp(raw, kBceClamp, 1.0 - kBceClamp);
    const double t = target[i];
    r.value -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    const bool clamped = raw != p;
    r.grad[i] = clamped ? T(0) : static_cast<T>((p - t) / (p * (1.0 - p)) / n);
  }
  r.value /= n;
  return r;
}

/// Alternative cross-entropy form mean|p ln(1 - t) + t ln(1 - p)|, both
/// arguments clamped like bce. Metric only, no gradient.
template <class T>
double bce_alt_form(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "bce_alt_form");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(double(pred[i]), kBceClamp, 1.0 - kBceClamp);
    const double t = std::clamp(double(target[i]), kBceClamp, 1.0 - kBceClamp);
    s += std::abs(p * std::log(1.0 - t) + t * std::log(1.0 - p));
  }
  return s / static_cast<double>(pred.size());
}

/// Squared difference of per-sample means, averaged over the batch axis.
/// For a batch of one this is (mean(pred) - mean(target))^2.
template <class T>
LossResult<T> vf_mse(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "vf_mse");
  TOPOPT_REQUIRE(pred.dim() >= 1 && pred.size() > 0, ErrorKind::ShapeMismatch, "vf_mse on empty tensor");
  const int nb = pred(0);
  const std::size_t m = pred.item_size();
  LossResult<T> r{0.0, Tensor<T>(pred.shape)};
  for (int b = 0; b < nb; ++b) {
    const std::size_t off = static_cast<std::size_t>(b) * m;
    double d = 0.0;
    for (std::size_t i = 0; i < m; ++i) d += double(pred[off + i]) - double(target[off + i]);
    d /= double(m);
    r.value += d * d;
    const T g = static_cast<T>(2.0 * d / double(m) / double(nb));
    for (std::size_t i = 0; i < m; ++i) r.grad[off + i] = g;
  }
  r.value /= double(nb);
  return r;
}

/// Weighted sum of losses sharing one prediction.
template <class T>
LossResult<T>& accumulate(LossResult<T>& into, const LossResult<T>& l, double weight = 1.0) {
  if (into.grad.shape.empty()) into.grad = Tensor<T>(l.grad.shape);
  require_same_shape(into.grad, l.grad, "loss accumulate");
  into.value += weight * l.value;
  for (std::size_t i = 0; i < l.grad.size(); ++i) into.grad[i] += static_cast<T>(weight * l.grad[i]);
  return into;
}

}  // namespace topopt::nn
