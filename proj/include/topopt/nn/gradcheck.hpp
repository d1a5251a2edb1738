// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "topopt/nn/ops.hpp"
#include "topopt/nn/params.hpp"

namespace topopt::nn {

struct GradReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst;  // "name[index]" of the worst entry
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;  // entries skipped because +-h crossed a ReLU/pool branch
  /// Per-tensor ||a - n|| / (||a|| + ||n||), maximised over tensors. Unlike the
  /// elementwise figure it is not dominated by entries near the rounding floor.
  double max_tensor_rel_err = 0.0;
  std::string worst_tensor;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor: rel = |a - n| / max(|a| + |n|, floor, noise).
  /// noise = noise_factor * eps * max(1, |L|) / step is the scale below which
  /// central differences are dominated by rounding of L.
  double floor = 1e-7;
  double noise_factor = 1e6;
  /// Entries checked per tensor (0 = all). Larger tensors are sampled with a fixed stride.
  std::size_t max_entries = 0;
  /// Skip entries whose +-h evaluations select different ReLU/pool branches.
  bool skip_kinks = true;
};

/// Central-difference check of every trainable parameter and every listed input.
///
/// `loss` recomputes the scalar objective from scratch using the current
/// parameter and input values. `backward` must zero the parameter gradients,
/// run forward + backward once, and return dL/d(input) for each listed input.
inline GradReport gradient_check(ParamSet<double>& ps, std::vector<Tensor<double>*> inputs,
                                 const std::function<double()>& loss,
                                 const std::function<std::vector<Tensor<double>>()>& backward,
                                 const GradCheckOptions& opt = {}) {
  const auto input_grads = backward();
  TOPOPT_REQUIRE(input_grads.size() == inputs.size(), ErrorKind::InvalidArgument,
                 "backward returned the wrong number of input gradients");

  GradReport rep;
  auto& trace = branch_trace();
  auto traced = [&](std::uint64_t& sig) {
    trace = BranchTrace{};
    trace.enabled = opt.skip_kinks;
    const double v = loss();
    sig = trace.hash;
    trace.enabled = false;
    return v;
  };
  std::uint64_t base_sig = 0, sig_up = 0, sig_down = 0;
  const double l0 = traced(base_sig);
  const double floor = std::max(opt.floor, opt.noise_factor * std::numeric_limits<double>::epsilon() *
                                               std::max(1.0, std::abs(l0)) / opt.step);
  auto check = [&](Tensor<double>& value, const Tensor<double>& analytic, const std::string& name) {
    require_same_shape(value, analytic, "gradient_check");
    const std::size_t n = value.size();
    const std::size_t stride = (opt.max_entries == 0 || n <= opt.max_entries) ? 1 : (n + opt.max_entries - 1) / opt.max_entries;
    double ss_diff = 0.0, ss_a = 0.0, ss_n = 0.0;
    const std::size_t checked0 = rep.checked;
    for (std::size_t i = 0; i < n; i += stride) {
      const double keep = value[i];
      value[i] = keep + opt.step;
      const double up = traced(sig_up);
      value[i] = keep - opt.step;
      const double down = traced(sig_down);
      value[i] = keep;
      if (opt.skip_kinks && (sig_up != base_sig || sig_down != base_sig)) {
        ++rep.kinks;
        continue;
      }
      const double num = (up - down) / (2.0 * opt.step);
      const double a = analytic[i];
      const double abs_err = std::abs(a - num);
      const double rel = abs_err / std::max(std::abs(a) + std::abs(num), floor);
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      if (rel > rep.max_rel_err || rep.worst.empty()) {
        rep.max_rel_err = rel;
        rep.worst = name + "[" + std::to_string(i) + "]";
        rep.worst_analytic = a;
        rep.worst_numeric = num;
      }
      ss_diff += (a - num) * (a - num);
      ss_a += a * a;
      ss_n += num * num;
      ++rep.checked;
    }
    const double denom = std::sqrt(ss_a) + std::sqrt(ss_n);
    // the elementwise floor, carried over to the norm of `count` entries
    const double count = static_cast<double>(std::max<std::size_t>(1, rep.checked - checked0));
    const double trel = denom > 0.0 ? std::sqrt(ss_diff) / std::max(denom, floor * std::sqrt(count)) : 0.0;
    if (trel > rep.max_tensor_rel_err || rep.worst_tensor.empty()) {
      rep.max_tensor_rel_err = trel;
      rep.worst_tensor = name;
    }
  };

  // loss() must not touch gradients, but snapshot anyway.
  std::vector<std::pair<std::string, Tensor<double>>> grads;
  for (auto& [name, p] : ps)
    if (p.trainable) grads.emplace_back(name, p.grad);
  for (auto& [name, g] : grads) check(ps.at(name).value, g, name);
  for (std::size_t k = 0; k < inputs.size(); ++k) check(*inputs[k], input_grads[k], "input" + std::to_string(k));
  return rep;
}

}  // namespace topopt::nn
