// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "topopt/core/field.hpp"

namespace topopt::simp {

/// Mesh-independence sensitivity filter with cone weights
/// w(e, i) = max(0, rmin - dist(e, i)), distances in element widths.
/// The neighbour lists are built once per grid and radius.
class SensitivityFilter {
 public:
  SensitivityFilter(GridShape shape, double rmin) : shape_(shape), rmin_(rmin) {
    TOPOPT_REQUIRE(rmin >= 1.0, ErrorKind::InvalidArgument, "filter radius must be >= 1");
    const int reach = static_cast<int>(std::ceil(rmin)) - 1;
    const int rz = shape.dimensionality == 3 ? reach : 0;
    offsets_.assign(shape.size() + 1, 0);
    for (int z = 0; z < shape.nz(); ++z)
      for (int y = 0; y < shape.ny(); ++y)
        for (int x = 0; x < shape.nx(); ++x) {
          const auto e = shape.index(x, y, z);
          for (int k = std::max(z - rz, 0); k <= std::min(z + rz, shape.nz() - 1); ++k)
            for (int j = std::max(y - reach, 0); j <= std::min(y + reach, shape.ny() - 1); ++j)
              for (int i = std::max(x - reach, 0); i <= std::min(x + reach, shape.nx() - 1); ++i) {
                const double dist = std::sqrt(double((i - x) * (i - x) + (j - y) * (j - y) + (k - z) * (k - z)));
                const double w = rmin - dist;
                if (w <= 0.0) continue;
                nbr_.push_back(shape.index(i, j, k));
                weight_.push_back(w);
              }
          offsets_[e + 1] = nbr_.size();
        }
  }

  /// s_hat_e = sum_i w_i rho_i s_i / (rho_e sum_i w_i)
  SensitivityField apply(const DensityField& rho, const SensitivityField& sens) const {
    TOPOPT_REQUIRE(rho.shape == shape_ && sens.shape == shape_, ErrorKind::ShapeMismatch,
                   "filter input shape mismatch");
    SensitivityField out(shape_);
    for (std::size_t e = 0; e < shape_.size(); ++e) {
      double num = 0.0, wsum = 0.0;
      for (std::size_t k = offsets_[e]; k < offsets_[e + 1]; ++k) {
        const auto i = nbr_[k];
        num += weight_[k] * rho[i] * sens[i];
        wsum += weight_[k];
      }
      out[e] = num / (rho[e] * wsum);
    }
    return out;
  }

  double radius() const { return rmin_; }

 private:
  GridShape shape_;
  double rmin_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> nbr_;
  std::vector<double> weight_;
};

inline SensitivityField filter_sensitivities(const GridShape& shape, const DensityField& rho,
                                             const SensitivityField& sens, double filter_radius) {
  return SensitivityFilter(shape, filter_radius).apply(rho, sens);
}

}  // namespace topopt::simp
