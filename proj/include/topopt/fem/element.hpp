// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "topopt/fem/model.hpp"

namespace topopt::fem {

namespace detail {

// Reference-element corner signs, same order as StructuredGrid::element_nodes.
inline constexpr std::array<std::array<double, 3>, 8> kCornerSigns{{
    {-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
    {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1},
}};

inline Eigen::MatrixXd plane_stress_matrix(double e, double nu) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 3);
  const double c = e / (1.0 - nu * nu);
  d(0, 0) = c;
  d(0, 1) = c * nu;
  d(1, 0) = c * nu;
  d(1, 1) = c;
  d(2, 2) = c * (1.0 - nu) / 2.0;
  return d;
}

inline Eigen::MatrixXd isotropic_3d_matrix(double e, double nu) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(6, 6);
  const double lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
  const double mu = e / (2.0 * (1.0 + nu));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) d(i, j) = lambda;
    d(i, i) = lambda + 2.0 * mu;
    d(i + 3, i + 3) = mu;
  }
  return d;
}

}  // namespace detail

/// Unit-modulus element stiffness matrix k0 for the grid's element (bilinear
/// quad in plane stress with unit thickness, or trilinear hex), integrated with
/// 2x2(x2) Gauss points. The penalised element matrix is
/// material.stiffness_scale(rho) * k0.
inline Eigen::MatrixXd element_stiffness(const MaterialModel& material, const StructuredGrid& grid) {
  material.validate();
  grid.validate();
  const int dim = grid.dim();
  const int nn = grid.nodes_per_element();
  const int nd = nn * dim;
  const int nstrain = dim == 2 ? 3 : 6;
  const Eigen::MatrixXd d = dim == 2 ? detail::plane_stress_matrix(1.0, material.poisson)
                                     : detail::isotropic_3d_matrix(1.0, material.poisson);
  const double g = 1.0 / std::sqrt(3.0);
  const std::array<double, 2> pts{-g, g};

  // Jacobian of the axis-aligned map is diag(h/2).
  std::array<double, 3> half{};
  double detj = 1.0;
  for (int a = 0; a < dim; ++a) {
    half[a] = grid.element_size[a] / 2.0;
    detj *= half[a];
  }

  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(nd, nd);
  Eigen::MatrixXd b(nstrain, nd);
  const int nz_pts = dim == 3 ? 2 : 1;
  for (int iz = 0; iz < nz_pts; ++iz) {
    for (int iy = 0; iy < 2; ++iy) {
      for (int ix = 0; ix < 2; ++ix) {
        const std::array<double, 3> xi{pts[ix], pts[iy], dim == 3 ? pts[iz] : 0.0};
        b.setZero();
        for (int a = 0; a < nn; ++a) {
          const auto& s = detail::kCornerSigns[a];
          std::array<double, 3> dn{};  // physical-space shape-function gradient
          if (dim == 2) {
            dn[0] = 0.25 * s[0] * (1.0 + s[1] * xi[1]) / half[0];
            dn[1] = 0.25 * s[1] * (1.0 + s[0] * xi[0]) / half[1];
            b(0, 2 * a) = dn[0];
            b(1, 2 * a + 1) = dn[1];
            b(2, 2 * a) = dn[1];
            b(2, 2 * a + 1) = dn[0];
          } else {
            dn[0] = 0.125 * s[0] * (1.0 + s[1] * xi[1]) * (1.0 + s[2] * xi[2]) / half[0];
            dn[1] = 0.125 * s[1] * (1.0 + s[0] * xi[0]) * (1.0 + s[2] * xi[2]) / half[1];
            dn[2] = 0.125 * s[2] * (1.0 + s[0] * xi[0]) * (1.0 + s[1] * xi[1]) / half[2];
            const int c = 3 * a;
            b(0, c) = dn[0];
            b(1, c + 1) = dn[1];
            b(2, c + 2) = dn[2];
            b(3, c) = dn[1];
            b(3, c + 1) = dn[0];
            b(4, c + 1) = dn[2];
            b(4, c + 2) = dn[1];
            b(5, c) = dn[2];
            b(5, c + 2) = dn[0];
          }
        }
        k.noalias() += b.transpose() * d * b * detj;
      }
    }
  }
  // Symmetrise away rounding so assembly is exactly symmetric.
  return 0.5 * (k + k.transpose());
}

}  // namespace topopt::fem
