// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "topopt/core/error.hpp"
#include "topopt/core/field.hpp"

namespace topopt::fem {

/// SIMP material: E(rho) = youngs_min + rho^p (youngs_base - youngs_min).
struct MaterialModel {
  double youngs_base = 1.0;
  double youngs_min = 1e-9;
  double poisson = 0.3;
  double penalty_p = 3.0;

  void validate() const {
    TOPOPT_REQUIRE(youngs_min > 0.0, ErrorKind::InvalidArgument, "youngs_min must be positive");
    TOPOPT_REQUIRE(youngs_min < youngs_base, ErrorKind::InvalidArgument,
                   "youngs_min must be below youngs_base");
    TOPOPT_REQUIRE(penalty_p >= 1.0, ErrorKind::InvalidArgument, "penalty_p must be >= 1");
    TOPOPT_REQUIRE(poisson >= 0.0 && poisson < 0.5, ErrorKind::InvalidArgument,
                   "poisson ratio must lie in [0, 0.5)");
  }

  /// Stiffness multiplier applied to the unit element matrix.
  double stiffness_scale(double rho) const {
    return youngs_min + std::pow(rho, penalty_p) * (youngs_base - youngs_min);
  }
};

/// Regular grid of square (2D) or cubic-lattice (3D) elements.
struct StructuredGrid {
  GridShape shape;
  std::array<double, 3> element_size{1.0, 1.0, 1.0};

  StructuredGrid() = default;
  explicit StructuredGrid(GridShape s, std::array<double, 3> h = {1.0, 1.0, 1.0})
      : shape(s), element_size(h) {
    validate();
  }

  void validate() const {
    TOPOPT_REQUIRE(shape.dimensionality == 2 || shape.dimensionality == 3,
                   ErrorKind::InvalidArgument, "grid dimensionality must be 2 or 3");
    for (int a = 0; a < shape.dimensionality; ++a) {
      TOPOPT_REQUIRE(shape.n[a] >= 1, ErrorKind::InvalidArgument, "grid dims must be >= 1");
      TOPOPT_REQUIRE(element_size[a] > 0.0, ErrorKind::InvalidArgument,
                     "element size must be positive");
    }
    if (shape.dimensionality == 2)
      TOPOPT_REQUIRE(shape.n[2] == 1, ErrorKind::InvalidArgument, "2D grid must have nz == 1");
  }

  int dim() const { return shape.dimensionality; }
  int nodes_x() const { return shape.n[0] + 1; }
  int nodes_y() const { return shape.n[1] + 1; }
  int nodes_z() const { return dim() == 3 ? shape.n[2] + 1 : 1; }
  std::size_t node_count() const {
    return static_cast<std::size_t>(nodes_x()) * nodes_y() * nodes_z();
  }
  std::size_t dof_count() const { return node_count() * static_cast<std::size_t>(dim()); }
  std::size_t element_count() const { return shape.size(); }
  int nodes_per_element() const { return dim() == 2 ? 4 : 8; }
  int dofs_per_element() const { return nodes_per_element() * dim(); }

  std::size_t node_index(int i, int j, int k = 0) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(nodes_x()) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(nodes_y()) * k);
  }
  std::array<int, 3> node_coords(std::size_t node) const {
    const auto nx = static_cast<std::size_t>(nodes_x());
    const auto ny = static_cast<std::size_t>(nodes_y());
    return {static_cast<int>(node % nx), static_cast<int>((node / nx) % ny),
            static_cast<int>(node / (nx * ny))};
  }
  std::array<double, 3> node_position(std::size_t node) const {
    const auto c = node_coords(node);
    return {c[0] * element_size[0], c[1] * element_size[1], c[2] * element_size[2]};
  }

  /// Global node ids of element (x, y, z): counter-clockwise bottom face, then top face.
  std::array<std::size_t, 8> element_nodes(int x, int y, int z = 0) const {
    std::array<std::size_t, 8> n{};
    n[0] = node_index(x, y, z);
    n[1] = node_index(x + 1, y, z);
    n[2] = node_index(x + 1, y + 1, z);
    n[3] = node_index(x, y + 1, z);
    if (dim() == 3) {
      n[4] = node_index(x, y, z + 1);
      n[5] = node_index(x + 1, y, z + 1);
      n[6] = node_index(x + 1, y + 1, z + 1);
      n[7] = node_index(x, y + 1, z + 1);
    }
    return n;
  }

  /// Global dof ids of an element in local element-matrix order.
  std::vector<std::size_t> element_dofs(std::size_t element) const {
    const auto ex = static_cast<int>(element % shape.n[0]);
    const auto ey = static_cast<int>((element / shape.n[0]) % shape.n[1]);
    const auto ez = static_cast<int>(element / (static_cast<std::size_t>(shape.n[0]) * shape.n[1]));
    const auto nodes = element_nodes(ex, ey, ez);
    std::vector<std::size_t> dofs;
    dofs.reserve(static_cast<std::size_t>(dofs_per_element()));
    for (int a = 0; a < nodes_per_element(); ++a)
      for (int c = 0; c < dim(); ++c) dofs.push_back(nodes[a] * dim() + c);
    return dofs;
  }
};

struct NodalLoad {
  std::size_t node = 0;
  std::array<double, 3> force{0.0, 0.0, 0.0};
  friend bool operator==(const NodalLoad&, const NodalLoad&) = default;
};

/// Supports and nodal-equivalent loads of one problem.
struct LoadCase {
  std::vector<std::size_t> fixed_dofs;  // sorted, unique
  std::vector<NodalLoad> nodal_loads;

  void fix_node(std::size_t node, int dim) {
    for (int c = 0; c < dim; ++c) fixed_dofs.push_back(node * dim + c);
    normalize();
  }
  void normalize() {
    std::sort(fixed_dofs.begin(), fixed_dofs.end());
    fixed_dofs.erase(std::unique(fixed_dofs.begin(), fixed_dofs.end()), fixed_dofs.end());
  }
  bool is_fixed(std::size_t dof) const {
    return std::binary_search(fixed_dofs.begin(), fixed_dofs.end(), dof);
  }

  void validate(const StructuredGrid& grid) const {
    TOPOPT_REQUIRE(!fixed_dofs.empty(), ErrorKind::InvalidArgument, "no fixed dofs");
    for (auto d : fixed_dofs)
      TOPOPT_REQUIRE(d < grid.dof_count(), ErrorKind::InvalidArgument, "fixed dof out of range");
    for (const auto& l : nodal_loads) {
      TOPOPT_REQUIRE(l.node < grid.node_count(), ErrorKind::InvalidArgument,
                     "load node out of range");
      bool all_fixed = true;
      for (int c = 0; c < grid.dim(); ++c) all_fixed = all_fixed && is_fixed(l.node * grid.dim() + c);
      TOPOPT_REQUIRE(!all_fixed, ErrorKind::InvalidArgument, "load applied on a fully fixed node");
    }
  }

  friend bool operator==(const LoadCase&, const LoadCase&) = default;
};

/// A complete compliance-minimisation problem.
struct Problem {
  StructuredGrid grid;
  MaterialModel material;
  LoadCase loads;
  double target_vf = 0.5;
};

}  // namespace topopt::fem
