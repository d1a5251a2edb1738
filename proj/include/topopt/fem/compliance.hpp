// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "topopt/fem/assembly.hpp"
#include "topopt/fem/solver.hpp"

namespace topopt::fem {

struct SolveResult {
  std::vector<double> displacements;
  ComplianceField element_compliance;
  /// u_e^T k0 u_e per element, the unpenalised energy density used by the sensitivities.
  std::vector<double> unit_energy;
  double total_compliance = 0.0;
  double force_dot_u = 0.0;
};

/// Element compliances c_e = E(rho_e) u_e^T k0 u_e, which sum to U^T K U = F.U.
inline SolveResult compliance_fields(const AssemblyPattern& pat, const std::vector<double>& u,
                                     const DensityField& densities, const MaterialModel& material,
                                     const Eigen::MatrixXd& k0, const std::vector<double>& force) {
  const auto& grid = pat.grid();
  TOPOPT_REQUIRE(densities.shape == grid.shape, ErrorKind::ShapeMismatch,
                 "density field does not match grid");
  TOPOPT_REQUIRE(u.size() == grid.dof_count(), ErrorKind::ShapeMismatch,
                 "displacement vector has wrong length");
  SolveResult res;
  res.displacements = u;
  res.element_compliance = ComplianceField(grid.shape);
  res.unit_energy.assign(grid.element_count(), 0.0);
  for (std::size_t e = 0; e < grid.element_count(); ++e) {
    const Eigen::VectorXd ue = gather_element(pat, e, u);
    const double energy = std::max(0.0, ue.dot(k0 * ue));
    res.unit_energy[e] = energy;
    res.element_compliance[e] = material.stiffness_scale(densities[e]) * energy;
  }
  res.total_compliance = res.element_compliance.sum();
  double fu = 0.0;
  for (std::size_t i = 0; i < force.size() && i < u.size(); ++i) fu += force[i] * u[i];
  res.force_dot_u = fu;
  return res;
}

/// Per-element strain energy of the solid (unpenalised) material,
/// (E_base - E_min) u_e^T k0 u_e. Element compliance is E_min u^T k0 u + rho^p * this.
inline std::vector<double> strain_energy(const SolveResult& r, const MaterialModel& material) {
  std::vector<double> se(r.unit_energy.size());
  for (std::size_t e = 0; e < se.size(); ++e)
    se[e] = (material.youngs_base - material.youngs_min) * r.unit_energy[e];
  return se;
}

/// Grid-bound analysis object: caches the sparsity pattern and k0 so repeated
/// solves on the same grid (one per SIMP iteration) only redo assembly.
class FeaSolver {
 public:
  FeaSolver(const StructuredGrid& grid, const MaterialModel& material, SolverOptions opt = {})
      : pattern_(std::make_shared<AssemblyPattern>(grid)),
        material_(material),
        k0_(element_stiffness(material, grid)),
        opt_(opt) {}

  SolveResult solve(const DensityField& densities, const LoadCase& loads,
                    const std::vector<double>* warm_start = nullptr, SolveStats* stats = nullptr) const {
    const auto sys = assemble_and_constrain(*pattern_, densities, material_, loads, k0_);
    const auto u = solve_displacements(sys, opt_, warm_start, stats);
    return compliance_fields(*pattern_, u, densities, material_, k0_, sys.force);
  }

  const StructuredGrid& grid() const { return pattern_->grid(); }
  const AssemblyPattern& pattern() const { return *pattern_; }
  const MaterialModel& material() const { return material_; }
  const Eigen::MatrixXd& k0() const { return k0_; }
  const SolverOptions& options() const { return opt_; }

 private:
  std::shared_ptr<const AssemblyPattern> pattern_;
  MaterialModel material_;
  Eigen::MatrixXd k0_;
  SolverOptions opt_;
};

inline SolveResult solve(const Problem& p, const DensityField& densities, SolverOptions opt = {}) {
  return FeaSolver(p.grid, p.material, opt).solve(densities, p.loads);
}

}  // namespace topopt::fem
