// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <array>
#include <cstddef>
#include <numeric>
#include <vector>

#include "topopt/core/error.hpp"

namespace topopt {

/// Element counts along x, y, z. A 2D shape has z == 1 and dimensionality 2.
struct GridShape {
  int dimensionality = 2;
  std::array<int, 3> n{1, 1, 1};

  static GridShape make2d(int nx, int ny) { return {2, {nx, ny, 1}}; }
  static GridShape make3d(int nx, int ny, int nz) { return {3, {nx, ny, nz}}; }

  int nx() const { return n[0]; }
  int ny() const { return n[1]; }
  int nz() const { return n[2]; }
  std::size_t size() const {
    return static_cast<std::size_t>(n[0]) * static_cast<std::size_t>(n[1]) *
           static_cast<std::size_t>(n[2]);
  }
  std::size_t index(int x, int y, int z = 0) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(n[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(n[1]) * static_cast<std::size_t>(z));
  }
  bool is_cubic() const {
    return dimensionality == 2 ? n[0] == n[1] : (n[0] == n[1] && n[1] == n[2]);
  }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// Per-element scalar field on a structured grid. The tag keeps densities,
/// compliances and sensitivities from being mixed up at call sites.
template <class Tag>
struct Field {
  GridShape shape;
  std::vector<double> values;

  Field() = default;
  explicit Field(GridShape s, double fill = 0.0) : shape(s), values(s.size(), fill) {}
  Field(GridShape s, std::vector<double> v) : shape(s), values(std::move(v)) {
    TOPOPT_REQUIRE(values.size() == shape.size(), ErrorKind::ShapeMismatch,
                   "field data length does not match its shape");
  }

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double& at(int x, int y, int z = 0) { return values[shape.index(x, y, z)]; }
  double at(int x, int y, int z = 0) const { return values[shape.index(x, y, z)]; }

  double mean() const {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  }
  double sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

  template <class Other>
  static Field from(const Field<Other>& f) {
    return Field(f.shape, f.values);
  }

  friend bool operator==(const Field&, const Field&) = default;
};

struct DensityTag {};
struct ComplianceTag {};
struct SensitivityTag {};

using DensityField = Field<DensityTag>;
using ComplianceField = Field<ComplianceTag>;
using SensitivityField = Field<SensitivityTag>;

/// Root-mean-square distance between two fields, ||a - b||_2 / sqrt(N).
template <class A, class B>
double normalized_l2(const Field<A>& a, const Field<B>& b) {
  TOPOPT_REQUIRE(a.shape == b.shape, ErrorKind::ShapeMismatch, "normalized_l2 shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return a.size() == 0 ? 0.0 : std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace topopt
