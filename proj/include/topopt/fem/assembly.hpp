// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <memory>
#include <vector>

#include "topopt/core/field.hpp"
#include "topopt/fem/element.hpp"
#include "topopt/fem/model.hpp"

namespace topopt::fem {

/// Compressed sparse row matrix with sorted column indices.
struct CsrMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::uint32_t> col;
  std::vector<double> val;

  void multiply(const std::vector<double>& x, std::vector<double>& y) const {
    y.assign(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) s += val[k] * x[col[k]];
      y[r] = s;
    }
  }

  double coeff(std::size_t r, std::size_t c) const {
    const auto b = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[r]);
    const auto e = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[r + 1]);
    const auto it = std::lower_bound(b, e, static_cast<std::uint32_t>(c));
    if (it == e || *it != c) return 0.0;
    return val[static_cast<std::size_t>(it - col.begin())];
  }

  Eigen::MatrixXd to_dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
        m(static_cast<Eigen::Index>(r), col[k]) = val[k];
    return m;
  }
};

/// Constrained linear system K U = F. Fixed dofs carry an identity row/column
/// and a zero right-hand side, so K stays symmetric.
struct LinearSystem {
  CsrMatrix stiffness;
  std::vector<double> force;
  std::vector<std::size_t> fixed_dofs;
  int dim = 2;
  std::size_t element_count = 0;
};

/// Sparsity pattern of a structured grid plus, per element, the CSR slot of
/// every (i, j) pair of its element matrix. Built once per grid and reused for
/// every assembly of a SIMP run.
class AssemblyPattern {
 public:
  explicit AssemblyPattern(const StructuredGrid& grid) : grid_(grid) {
    grid.validate();
    const int dim = grid.dim();
    const std::size_t ndof = grid.dof_count();
    const int nx = grid.nodes_x(), ny = grid.nodes_y(), nz = grid.nodes_z();

    pattern_.n = ndof;
    pattern_.row_ptr.assign(ndof + 1, 0);
    // Node couplings are the 3x3(x3) lattice neighbourhood.
    for (std::size_t node = 0; node < grid.node_count(); ++node) {
      const auto c = grid.node_coords(node);
      std::vector<std::size_t> nbrs;
      for (int dk = -1; dk <= 1; ++dk)
        for (int dj = -1; dj <= 1; ++dj)
          for (int di = -1; di <= 1; ++di) {
            const int i = c[0] + di, j = c[1] + dj, k = c[2] + dk;
            if (i < 0 || j < 0 || k < 0 || i >= nx || j >= ny || k >= nz) continue;
            nbrs.push_back(grid.node_index(i, j, k));
          }
      std::sort(nbrs.begin(), nbrs.end());
      for (int comp = 0; comp < dim; ++comp) {
        const std::size_t row = node * dim + comp;
        pattern_.row_ptr[row + 1] = nbrs.size() * dim;
        for (auto nb : nbrs)
          for (int cc = 0; cc < dim; ++cc)
            pattern_.col.push_back(static_cast<std::uint32_t>(nb * dim + cc));
      }
    }
    for (std::size_t r = 0; r < ndof; ++r) pattern_.row_ptr[r + 1] += pattern_.row_ptr[r];
    pattern_.val.assign(pattern_.col.size(), 0.0);

    const std::size_t ne = grid.element_count();
    const auto nd = static_cast<std::size_t>(grid.dofs_per_element());
    slots_.resize(ne * nd * nd);
    dofs_.resize(ne * nd);
    for (std::size_t e = 0; e < ne; ++e) {
      const auto dofs = grid.element_dofs(e);
      std::copy(dofs.begin(), dofs.end(), dofs_.begin() + static_cast<std::ptrdiff_t>(e * nd));
      for (std::size_t a = 0; a < nd; ++a) {
        const auto r = dofs[a];
        const auto b = pattern_.col.begin() + static_cast<std::ptrdiff_t>(pattern_.row_ptr[r]);
        const auto en = pattern_.col.begin() + static_cast<std::ptrdiff_t>(pattern_.row_ptr[r + 1]);
        for (std::size_t bb = 0; bb < nd; ++bb) {
          const auto it = std::lower_bound(b, en, static_cast<std::uint32_t>(dofs[bb]));
          slots_[(e * nd + a) * nd + bb] = static_cast<std::uint32_t>(it - pattern_.col.begin());
        }
      }
    }
  }

  const StructuredGrid& grid() const { return grid_; }
  const CsrMatrix& pattern() const { return pattern_; }
  std::size_t dofs_per_element() const { return static_cast<std::size_t>(grid_.dofs_per_element()); }
  const std::size_t* element_dofs(std::size_t e) const { return dofs_.data() + e * dofs_per_element(); }
  const std::uint32_t* element_slots(std::size_t e) const {
    const auto nd = dofs_per_element();
    return slots_.data() + e * nd * nd;
  }

 private:
  StructuredGrid grid_;
  CsrMatrix pattern_;
  std::vector<std::uint32_t> slots_;
  std::vector<std::size_t> dofs_;
};

/// Gathers the element displacement vector u_e from the global vector.
inline Eigen::VectorXd gather_element(const AssemblyPattern& pat, std::size_t e,
                                      const std::vector<double>& u) {
  const auto nd = pat.dofs_per_element();
  const auto* dofs = pat.element_dofs(e);
  Eigen::VectorXd ue(static_cast<Eigen::Index>(nd));
  for (std::size_t a = 0; a < nd; ++a) ue(static_cast<Eigen::Index>(a)) = u[dofs[a]];
  return ue;
}

/// True when the fixed dofs remove every rigid-body mode of the grid
/// (3 in 2D, 6 in 3D), i.e. the constrained stiffness is positive definite.
inline bool constrains_rigid_modes(const StructuredGrid& grid, const std::vector<std::size_t>& fixed_dofs) {
  const int dim = grid.dim();
  const int nmodes = dim == 2 ? 3 : 6;
  Eigen::MatrixXd r(static_cast<Eigen::Index>(fixed_dofs.size()), nmodes);
  r.setZero();
  for (std::size_t i = 0; i < fixed_dofs.size(); ++i) {
    const auto node = fixed_dofs[i] / dim;
    const int comp = static_cast<int>(fixed_dofs[i] % dim);
    const auto p = grid.node_position(node);
    const auto row = static_cast<Eigen::Index>(i);
    r(row, comp) = 1.0;  // translations
    if (dim == 2) {
      // rotation about z: (-y, x)
      r(row, 2) = comp == 0 ? -p[1] : p[0];
    } else {
      // rotations about x, y, z: w x p
      const double x = p[0], y = p[1], z = p[2];
      const std::array<std::array<double, 3>, 3> rot{{{0.0, -z, y}, {z, 0.0, -x}, {-y, x, 0.0}}};
      for (int m = 0; m < 3; ++m) r(row, 3 + m) = rot[m][comp];
    }
  }
  if (fixed_dofs.size() < static_cast<std::size_t>(nmodes)) return false;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(r);
  qr.setThreshold(1e-10);
  return qr.rank() == nmodes;
}

/// Assembles K(rho) and F and applies the support conditions.
/// `element_order`, when non-empty, is the order in which elements are summed
/// (used to check order independence).
inline LinearSystem assemble_and_constrain(const AssemblyPattern& pat, const DensityField& densities,
                                           const MaterialModel& material, const LoadCase& loads,
                                           const Eigen::MatrixXd& k0,
                                           const std::vector<std::size_t>& element_order = {}) {
  const auto& grid = pat.grid();
  TOPOPT_REQUIRE(densities.shape == grid.shape, ErrorKind::ShapeMismatch,
                 "density field does not match grid");
  loads.validate(grid);
  const int dim = grid.dim();
  const auto nd = pat.dofs_per_element();

  LinearSystem sys;
  sys.stiffness = pat.pattern();
  auto& val = sys.stiffness.val;
  const std::size_t ne = grid.element_count();
  for (std::size_t idx = 0; idx < ne; ++idx) {
    const std::size_t e = element_order.empty() ? idx : element_order[idx];
    const double s = material.stiffness_scale(densities[e]);
    const auto* slots = pat.element_slots(e);
    for (std::size_t a = 0; a < nd; ++a)
      for (std::size_t b = 0; b < nd; ++b)
        val[slots[a * nd + b]] += s * k0(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  }

  sys.force.assign(grid.dof_count(), 0.0);
  for (const auto& l : loads.nodal_loads)
    for (int c = 0; c < dim; ++c) sys.force[l.node * dim + c] += l.force[c];

  sys.fixed_dofs = loads.fixed_dofs;
  sys.dim = dim;
  sys.element_count = ne;
  TOPOPT_REQUIRE(constrains_rigid_modes(grid, loads.fixed_dofs), ErrorKind::SingularSystem,
                 "fixed dofs leave rigid-body modes unconstrained");
  auto& k = sys.stiffness;
  std::vector<char> fixed(grid.dof_count(), 0);
  for (auto d : loads.fixed_dofs) fixed[d] = 1;
  for (std::size_t r = 0; r < k.n; ++r) {
    for (std::size_t p = k.row_ptr[r]; p < k.row_ptr[r + 1]; ++p) {
      const auto c = k.col[p];
      if (fixed[r] || fixed[c]) k.val[p] = (r == c) ? 1.0 : 0.0;
    }
    if (fixed[r]) sys.force[r] = 0.0;
  }
  return sys;
}

inline LinearSystem assemble_and_constrain(const StructuredGrid& grid, const DensityField& densities,
                                           const MaterialModel& material, const LoadCase& loads) {
  const AssemblyPattern pat(grid);
  return assemble_and_constrain(pat, densities, material, loads, element_stiffness(material, grid));
}

}  // namespace topopt::fem
