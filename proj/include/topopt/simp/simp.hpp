// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "topopt/fem/compliance.hpp"
#include "topopt/simp/filter.hpp"

namespace topopt::simp {

enum class ChangeNorm { LInf, L2 };

struct SimpParams {
  double target_vf = 0.5;
  double filter_radius = 1.5;
  double move_limit = 0.2;
  double oc_damping = 0.5;
  double change_threshold = 0.01;
  int max_iterations = 150;
  double density_floor = 1e-3;
  /// Volume constraint tolerance enforced by the multiplier bisection.
  double volume_tolerance = 1e-4;
  ChangeNorm change_norm = ChangeNorm::LInf;

  void validate() const {
    TOPOPT_REQUIRE(target_vf > 0.0 && target_vf < 1.0, ErrorKind::InvalidArgument, "target_vf must lie in (0,1)");
    TOPOPT_REQUIRE(filter_radius >= 1.0, ErrorKind::InvalidArgument, "filter_radius must be >= 1");
    TOPOPT_REQUIRE(move_limit > 0.0 && move_limit <= 1.0, ErrorKind::InvalidArgument, "move_limit must lie in (0,1]");
    TOPOPT_REQUIRE(oc_damping > 0.0 && oc_damping <= 1.0, ErrorKind::InvalidArgument, "oc_damping must lie in (0,1]");
    TOPOPT_REQUIRE(max_iterations >= 1, ErrorKind::InvalidArgument, "max_iterations must be >= 1");
    TOPOPT_REQUIRE(density_floor > 0.0 && density_floor < target_vf, ErrorKind::InvalidArgument,
                   "density_floor must lie in (0, target_vf)");
  }
};

/// Every iteration of a SIMP run. Entry 0 is the uniform start design;
/// compliances[i] is the element compliance of densities[i].
struct OptimizationTrace {
  std::vector<DensityField> densities;
  std::vector<ComplianceField> compliances;
  std::vector<double> total_compliance;
  std::vector<double> change;  // change[0] is +inf
  bool converged = false;

  std::size_t size() const { return densities.size(); }
  /// Number of density updates performed.
  std::size_t iterations() const { return densities.empty() ? 0 : densities.size() - 1; }
  const DensityField& final_density() const { return densities.back(); }
  friend bool operator==(const OptimizationTrace&, const OptimizationTrace&) = default;
};

/// dc/drho_e = -p rho^(p-1) (E_base - E_min) u_e^T k0 u_e
inline SensitivityField sensitivities(const DensityField& rho, const fem::SolveResult& solve,
                                      const fem::MaterialModel& material) {
  TOPOPT_REQUIRE(solve.unit_energy.size() == rho.size(), ErrorKind::ShapeMismatch,
                 "solve result does not match density field");
  SensitivityField s(rho.shape);
  const double p = material.penalty_p;
  for (std::size_t e = 0; e < rho.size(); ++e)
    s[e] = -p * std::pow(rho[e], p - 1.0) * (material.youngs_base - material.youngs_min) * solve.unit_energy[e];
  return s;
}

/// Optimality-criteria update rho_new = clamp(rho (-s/lambda)^eta) inside the
/// move limit, with lambda bisected until mean(rho_new) hits the target.
inline DensityField oc_update(const DensityField& rho, const SensitivityField& filtered, const SimpParams& params) {
  TOPOPT_REQUIRE(rho.shape == filtered.shape, ErrorKind::ShapeMismatch, "oc_update shape mismatch");
  const std::size_t n = rho.size();
  for (std::size_t e = 0; e < n; ++e)
    TOPOPT_REQUIRE(filtered[e] <= 0.0, ErrorKind::InvalidArgument, "sensitivities must be non-positive");

  DensityField out(rho.shape);
  auto evaluate = [&](double lambda) {
    double sum = 0.0;
    for (std::size_t e = 0; e < n; ++e) {
      const double lo = std::max(rho[e] - params.move_limit, params.density_floor);
      const double hi = std::min(rho[e] + params.move_limit, 1.0);
      const double cand = rho[e] * std::pow(-filtered[e] / lambda, params.oc_damping);
      out[e] = std::clamp(cand, lo, hi);
      sum += out[e];
    }
    return sum / static_cast<double>(n);
  };

  const double target = params.target_vf;
  const double tol = 0.1 * params.volume_tolerance;
  double l1 = 0.0;
  double l2 = 1.0;
  // Upper bracket: mean(rho(l2)) <= target.
  int doublings = 0;
  while (evaluate(l2) > target) {
    if (++doublings > 200) throw Error(ErrorKind::BisectionFailure, "no upper multiplier bracket in 200 doublings");
    l1 = l2;
    l2 *= 2.0;
  }
  // Lower bracket: shrink until mean(rho(l1)) >= target.
  if (l1 == 0.0) {
    l1 = l2;
    int halvings = 0;
    while (evaluate(l1) < target) {
      if (++halvings > 2000)
        throw Error(ErrorKind::BisectionFailure, "volume target unreachable within the move limit");
      l2 = l1;
      l1 *= 0.5;
      if (l1 == 0.0) throw Error(ErrorKind::BisectionFailure, "multiplier underflow");
    }
  }
  double mean = 0.0;
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (l1 + l2);
    mean = evaluate(mid);
    if (std::abs(mean - target) <= tol) return out;
    if (mean > target)
      l1 = mid;
    else
      l2 = mid;
    if (!(l2 > l1)) break;
  }
  if (std::abs(mean - target) <= params.volume_tolerance) return out;
  throw Error(ErrorKind::BisectionFailure, "multiplier bisection did not meet the volume tolerance");
}

inline double density_change(const DensityField& a, const DensityField& b, ChangeNorm norm) {
  double acc = 0.0;
  for (std::size_t e = 0; e < a.size(); ++e) {
    const double d = std::abs(a[e] - b[e]);
    acc = norm == ChangeNorm::LInf ? std::max(acc, d) : acc + d * d;
  }
  return norm == ChangeNorm::LInf ? acc : std::sqrt(acc);
}

/// Per-iteration progress hook: (iteration, total compliance, change).
using SimpObserver = std::function<void(int, double, double)>;

/// SIMP loop: solve, sensitivities, filter, OC update, repeated while the
/// change exceeds the threshold and the iteration cap is not reached.
inline OptimizationTrace run_simp(const fem::Problem& problem, const SimpParams& params,
                                  const fem::SolverOptions& solver = {}, const SimpObserver& observer = {}) {
  params.validate();
  problem.material.validate();
  problem.grid.validate();
  const fem::FeaSolver fea(problem.grid, problem.material, solver);
  const SensitivityFilter filter(problem.grid.shape, params.filter_radius);

  OptimizationTrace trace;
  DensityField rho(problem.grid.shape, params.target_vf);
  std::vector<double> warm;
  auto analyse = [&](const DensityField& d, int iteration) {
    try {
      auto r = fea.solve(d, problem.loads, warm.empty() ? nullptr : &warm);
      warm = r.displacements;
      return r;
    } catch (const Error& e) {
      throw Error(e.kind(), "SIMP iteration " + std::to_string(iteration) + ": " + e.what());
    }
  };

  auto result = analyse(rho, 0);
  trace.densities.push_back(rho);
  trace.compliances.push_back(result.element_compliance);
  trace.total_compliance.push_back(result.total_compliance);
  trace.change.push_back(std::numeric_limits<double>::infinity());
  if (observer) observer(0, result.total_compliance, trace.change.back());

  double ch = std::numeric_limits<double>::infinity();
  int iter = 0;
  while (ch > params.change_threshold && iter < params.max_iterations) {
    ++iter;
    const auto sens = sensitivities(rho, result, problem.material);
    const auto filtered = filter.apply(rho, sens);
    DensityField next;
    try {
      next = oc_update(rho, filtered, params);
    } catch (const Error& e) {
      throw Error(e.kind(), "SIMP iteration " + std::to_string(iter) + ": " + e.what());
    }
    ch = density_change(next, rho, params.change_norm);
    rho = std::move(next);
    result = analyse(rho, iter);
    trace.densities.push_back(rho);
    trace.compliances.push_back(result.element_compliance);
    trace.total_compliance.push_back(result.total_compliance);
    trace.change.push_back(ch);
    if (observer) observer(iter, result.total_compliance, ch);
  }
  trace.converged = ch <= params.change_threshold;
  return trace;
}

}  // namespace topopt::simp
