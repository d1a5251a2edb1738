// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "topopt/core/field.hpp"
#include "topopt/fem/model.hpp"

namespace topopt::datagen {

/// A grid symmetry written as a signed axis permutation. New coordinate a is
/// old coordinate perm[a], reflected (c -> n - c) when flip[a] is set.
struct AxisMap {
  std::array<int, 3> perm{0, 1, 2};
  std::array<bool, 3> flip{false, false, false};
  friend bool operator==(const AxisMap&, const AxisMap&) = default;
};

struct SymmetryOp {
  const char* name;
  AxisMap map;
};

// 2D dihedral group on [row = y, col = x] tensors. "cw" follows the usual
// picture of a matrix rotated clockwise with row 0 at the top.
inline const std::vector<SymmetryOp>& symmetry_ops_2d() {
  static const std::vector<SymmetryOp> ops = {
      {"identity", {{0, 1, 2}, {false, false, false}}},
      {"rot90cw", {{1, 0, 2}, {true, false, false}}},
      {"rot180", {{0, 1, 2}, {true, true, false}}},
      {"rot90ccw", {{1, 0, 2}, {false, true, false}}},
      {"mirror_x", {{0, 1, 2}, {true, false, false}}},
      {"mirror_y", {{0, 1, 2}, {false, true, false}}},
      {"transpose", {{1, 0, 2}, {false, false, false}}},
      {"antitranspose", {{1, 0, 2}, {true, true, false}}},
  };
  return ops;
}

// 3D: quarter, half and three-quarter turns about each axis plus the three
// coordinate-plane mirrors.
inline const std::vector<SymmetryOp>& symmetry_ops_3d() {
  static const std::vector<SymmetryOp> ops = {
      {"identity", {{0, 1, 2}, {false, false, false}}},
      {"rot_x_90", {{0, 2, 1}, {false, true, false}}},
      {"rot_x_180", {{0, 1, 2}, {false, true, true}}},
      {"rot_x_270", {{0, 2, 1}, {false, false, true}}},
      {"rot_y_90", {{2, 1, 0}, {false, false, true}}},
      {"rot_y_180", {{0, 1, 2}, {true, false, true}}},
      {"rot_y_270", {{2, 1, 0}, {true, false, false}}},
      {"rot_z_90", {{1, 0, 2}, {true, false, false}}},
      {"rot_z_180", {{0, 1, 2}, {true, true, false}}},
      {"rot_z_270", {{1, 0, 2}, {false, true, false}}},
      {"mirror_x", {{0, 1, 2}, {true, false, false}}},
      {"mirror_y", {{0, 1, 2}, {false, true, false}}},
      {"mirror_z", {{0, 1, 2}, {false, false, true}}},
  };
  return ops;
}

inline const std::vector<SymmetryOp>& symmetry_ops(int dimensionality) {
  return dimensionality == 3 ? symmetry_ops_3d() : symmetry_ops_2d();
}

inline const SymmetryOp& symmetry_op(int dimensionality, int op_id) {
  const auto& ops = symmetry_ops(dimensionality);
  TOPOPT_REQUIRE(op_id >= 0 && op_id < static_cast<int>(ops.size()), ErrorKind::InvalidArgument,
                 "unknown symmetry op " + std::to_string(op_id));
  return ops[static_cast<std::size_t>(op_id)];
}

/// Composition: apply `first`, then `second`.
inline AxisMap compose(const AxisMap& first, const AxisMap& second) {
  AxisMap r;
  for (int a = 0; a < 3; ++a) {
    const int mid = second.perm[a];
    r.perm[a] = first.perm[mid];
    r.flip[a] = second.flip[a] != first.flip[mid];
  }
  return r;
}

/// Op id of the inverse, looked up within the same group.
inline int inverse_op(int dimensionality, int op_id) {
  const auto& ops = symmetry_ops(dimensionality);
  const AxisMap& m = symmetry_op(dimensionality, op_id).map;
  for (std::size_t i = 0; i < ops.size(); ++i)
    if (compose(m, ops[i].map) == AxisMap{}) return static_cast<int>(i);
  throw Error(ErrorKind::InvalidArgument, "symmetry op has no inverse in its set");
}

namespace detail {

inline void require_square(const GridShape& s) {
  TOPOPT_REQUIRE(s.is_cubic(), ErrorKind::NonSquareDomain, "augmentation needs a square or cubic domain");
}

/// Old lattice coordinates that land on new coordinates `q`; `extent` is
/// n - 1 for cells and n for nodes.
inline std::array<int, 3> source_of(const AxisMap& m, const std::array<int, 3>& q, int extent, int dim) {
  std::array<int, 3> old{0, 0, 0};
  for (int a = 0; a < dim; ++a) old[m.perm[a]] = m.flip[a] ? extent - q[a] : q[a];
  return old;
}

}  // namespace detail

template <class Tag>
Field<Tag> transform_field(const Field<Tag>& f, const AxisMap& m) {
  detail::require_square(f.shape);
  const int n = f.shape.nx();
  const int dim = f.shape.dimensionality;
  Field<Tag> out(f.shape);
  for (int z = 0; z < f.shape.nz(); ++z)
    for (int y = 0; y < f.shape.ny(); ++y)
      for (int x = 0; x < f.shape.nx(); ++x) {
        const auto o = detail::source_of(m, {x, y, z}, n - 1, dim);
        out.at(x, y, z) = f.at(o[0], o[1], o[2]);
      }
  return out;
}

template <class Tag>
Field<Tag> transform_field(const Field<Tag>& f, int op_id) {
  return transform_field(f, symmetry_op(f.shape.dimensionality, op_id).map);
}

/// Same op on an (input, target) pair.
template <class A, class B>
std::pair<Field<A>, Field<B>> augment(const Field<A>& input, const Field<B>& target, int op_id) {
  TOPOPT_REQUIRE(input.shape == target.shape, ErrorKind::ShapeMismatch, "augment pair shape mismatch");
  return {transform_field(input, op_id), transform_field(target, op_id)};
}

/// Maps supports and loads through the symmetry so that solving the mapped
/// problem reproduces the mapped fields.
inline fem::LoadCase transform_loads(const fem::StructuredGrid& grid, const fem::LoadCase& lc, const AxisMap& m) {
  detail::require_square(grid.shape);
  const int dim = grid.dim();
  const int n = grid.shape.nx();
  auto map_node = [&](std::size_t node) {
    const auto old = grid.node_coords(node);
    std::array<int, 3> q{0, 0, 0};
    for (int a = 0; a < dim; ++a) q[a] = m.flip[a] ? n - old[m.perm[a]] : old[m.perm[a]];
    return grid.node_index(q[0], q[1], q[2]);
  };
  fem::LoadCase out;
  for (auto d : lc.fixed_dofs) {
    const auto node = d / static_cast<std::size_t>(dim);
    const int comp = static_cast<int>(d % static_cast<std::size_t>(dim));
    int new_comp = 0;
    for (int a = 0; a < dim; ++a)
      if (m.perm[a] == comp) new_comp = a;
    out.fixed_dofs.push_back(map_node(node) * static_cast<std::size_t>(dim) + static_cast<std::size_t>(new_comp));
  }
  out.normalize();
  for (const auto& l : lc.nodal_loads) {
    fem::NodalLoad nl;
    nl.node = map_node(l.node);
    for (int a = 0; a < dim; ++a) nl.force[a] = m.flip[a] ? -l.force[m.perm[a]] : l.force[m.perm[a]];
    out.nodal_loads.push_back(nl);
  }
  return out;
}

inline fem::Problem transform_problem(const fem::Problem& p, int op_id) {
  fem::Problem out = p;
  out.loads = transform_loads(p.grid, p.loads, symmetry_op(p.grid.dim(), op_id).map);
  return out;
}

}  // namespace topopt::datagen
