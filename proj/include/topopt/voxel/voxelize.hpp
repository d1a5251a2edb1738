// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "topopt/core/field.hpp"

namespace topopt::voxel {

using Vec3 = std::array<double, 3>;

/// Unstructured linear tetrahedra with per-node scalar fields.
struct TetMesh {
  std::vector<Vec3> nodes;
  std::vector<std::array<int, 4>> tets;
  std::map<std::string, std::vector<double>> nodal_fields;

  void validate() const {
    TOPOPT_REQUIRE(!nodes.empty() && !tets.empty(), ErrorKind::EmptyMesh, "mesh has no nodes or no tets");
    for (const auto& t : tets)
      for (int i : t)
        TOPOPT_REQUIRE(i >= 0 && static_cast<std::size_t>(i) < nodes.size(), ErrorKind::InvalidArgument,
                       "tet references a missing node");
    for (const auto& [name, f] : nodal_fields)
      TOPOPT_REQUIRE(f.size() == nodes.size(), ErrorKind::ShapeMismatch, "nodal field '" + name + "' has wrong length");
  }

  std::array<Vec3, 4> corners(std::size_t t) const {
    return {nodes[tets[t][0]], nodes[tets[t][1]], nodes[tets[t][2]], nodes[tets[t][3]]};
  }
};

/// Cell-centred samples over an axis-aligned box. Field data uses the
/// same x-fastest ordering as GridShape.
struct VoxelGrid {
  std::array<int, 3> resolution{1, 1, 1};
  Vec3 origin{0, 0, 0};
  Vec3 extent{1, 1, 1};
  std::map<std::string, std::vector<double>> fields;
  /// Index of the tet that supplied each voxel, -1 outside the mesh.
  std::vector<int> owner;

  GridShape shape() const { return GridShape::make3d(resolution[0], resolution[1], resolution[2]); }
  std::size_t size() const { return shape().size(); }
  Vec3 spacing() const {
    return {extent[0] / resolution[0], extent[1] / resolution[1], extent[2] / resolution[2]};
  }
  Vec3 center(int i, int j, int k) const {
    const auto h = spacing();
    return {origin[0] + (i + 0.5) * h[0], origin[1] + (j + 0.5) * h[1], origin[2] + (k + 0.5) * h[2]};
  }

  template <class Tag>
  Field<Tag> field(const std::string& name) const {
    const auto it = fields.find(name);
    TOPOPT_REQUIRE(it != fields.end(), ErrorKind::InvalidArgument, "voxel grid has no field '" + name + "'");
    return Field<Tag>(shape(), it->second);
  }
};

inline constexpr double kInsideEps = 1e-10;

/// Barycentric coordinates of `p` in the tet (v0..v3); they sum to one.
inline std::array<double, 4> barycentric(const std::array<Vec3, 4>& v, const Vec3& p) {
  // Columns a, b, c = v0 - v3, v1 - v3, v2 - v3; solve [a b c] l = p - v3 by Cramer.
  Vec3 a, b, c, r;
  for (int i = 0; i < 3; ++i) {
    a[i] = v[0][i] - v[3][i];
    b[i] = v[1][i] - v[3][i];
    c[i] = v[2][i] - v[3][i];
    r[i] = p[i] - v[3][i];
  }
  auto det3 = [](const Vec3& x, const Vec3& y, const Vec3& z) {
    return x[0] * (y[1] * z[2] - y[2] * z[1]) - y[0] * (x[1] * z[2] - x[2] * z[1]) +
           z[0] * (x[1] * y[2] - x[2] * y[1]);
  };
  const double det = det3(a, b, c);
  double scale = 0.0;
  for (int i = 0; i < 3; ++i) scale = std::max({scale, std::abs(a[i]), std::abs(b[i]), std::abs(c[i])});
  TOPOPT_REQUIRE(std::abs(det) > 1e-12 * scale * scale * scale && scale > 0.0, ErrorKind::DegenerateTet,
                 "tetrahedron has (near) zero volume");
  const double l0 = det3(r, b, c) / det;
  const double l1 = det3(a, r, c) / det;
  const double l2 = det3(a, b, r) / det;
  return {l0, l1, l2, 1.0 - l0 - l1 - l2};
}

inline bool inside(const std::array<double, 4>& lambda, double eps = kInsideEps) {
  return std::all_of(lambda.begin(), lambda.end(), [&](double l) { return l >= -eps; });
}

/// Samples every nodal field at voxel centres over the mesh bounding box.
/// A centre on a shared face goes to the lowest-index tet; centres outside
/// the mesh get 0.
inline VoxelGrid voxelize(const TetMesh& mesh, std::array<int, 3> resolution) {
  mesh.validate();
  for (int r : resolution) TOPOPT_REQUIRE(r >= 1, ErrorKind::InvalidArgument, "resolution must be >= 1");
  VoxelGrid g;
  g.resolution = resolution;
  Vec3 lo = mesh.nodes[0], hi = mesh.nodes[0];
  for (const auto& n : mesh.nodes)
    for (int i = 0; i < 3; ++i) {
      lo[i] = std::min(lo[i], n[i]);
      hi[i] = std::max(hi[i], n[i]);
    }
  g.origin = lo;
  for (int i = 0; i < 3; ++i) {
    g.extent[i] = hi[i] - lo[i];
    TOPOPT_REQUIRE(g.extent[i] > 0.0, ErrorKind::EmptyMesh, "mesh bounding box is flat");
  }
  const auto shape = g.shape();
  const auto h = g.spacing();
  g.owner.assign(shape.size(), -1);
  for (const auto& [name, f] : mesh.nodal_fields) g.fields[name].assign(shape.size(), 0.0);

  for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
    const auto v = mesh.corners(t);
    Vec3 tlo = v[0], thi = v[0];
    for (const auto& p : v)
      for (int i = 0; i < 3; ++i) {
        tlo[i] = std::min(tlo[i], p[i]);
        thi[i] = std::max(thi[i], p[i]);
      }
    // Voxel index ranges whose centres can fall inside the tet's box.
    std::array<int, 3> i0{}, i1{};
    for (int i = 0; i < 3; ++i) {
      i0[i] = std::max(0, static_cast<int>(std::floor((tlo[i] - lo[i]) / h[i] - 0.5)) - 1);
      i1[i] = std::min(resolution[i] - 1, static_cast<int>(std::ceil((thi[i] - lo[i]) / h[i] - 0.5)) + 1);
    }
    for (int k = i0[2]; k <= i1[2]; ++k)
      for (int j = i0[1]; j <= i1[1]; ++j)
        for (int i = i0[0]; i <= i1[0]; ++i) {
          const auto idx = shape.index(i, j, k);
          if (g.owner[idx] >= 0) continue;
          const auto lambda = barycentric(v, g.center(i, j, k));
          if (!inside(lambda)) continue;
          g.owner[idx] = static_cast<int>(t);
          for (const auto& [name, f] : mesh.nodal_fields) {
            double s = 0.0;
            for (int c = 0; c < 4; ++c) s += lambda[c] * f[static_cast<std::size_t>(mesh.tets[t][c])];
            g.fields[name][idx] = s;
          }
        }
  }
  return g;
}

struct StrainEnergyTag {};
using StrainEnergyField = Field<StrainEnergyTag>;

/// c = rho^p * SE, elementwise.
inline ComplianceField compliance_from_strain_energy(const StrainEnergyField& se, const DensityField& rho, double p) {
  TOPOPT_REQUIRE(se.shape == rho.shape, ErrorKind::ShapeMismatch, "strain energy and density shapes differ");
  TOPOPT_REQUIRE(p >= 1.0, ErrorKind::InvalidArgument, "penalty must be >= 1");
  ComplianceField c(se.shape);
  for (std::size_t i = 0; i < se.size(); ++i) c[i] = std::pow(rho[i], p) * se[i];
  return c;
}

}  // namespace topopt::voxel
