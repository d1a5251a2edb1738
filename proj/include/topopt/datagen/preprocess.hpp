// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "topopt/core/field.hpp"

namespace topopt::datagen {

/// Floor applied before log10 so that zero compliance stays finite.
inline constexpr double kComplianceFloor = 1e-12;

/// log10 min-max constants of one compliance field. Kept per sample so that
/// network outputs can be mapped back to physical compliance.
struct NormalizationConstants {
  double log_min = 0.0;
  double log_max = 0.0;

  double span() const { return log_max - log_min; }
  bool degenerate() const { return !(log_max > log_min); }

  /// Normalized value of a raw compliance, clamped into [0,1].
  double forward(double c) const {
    if (degenerate()) return 0.0;
    const double v = (std::log10(std::max(c, kComplianceFloor)) - log_min) / span();
    return std::clamp(v, 0.0, 1.0);
  }
  double inverse(double v) const { return std::pow(10.0, log_min + v * span()); }

  friend bool operator==(const NormalizationConstants&, const NormalizationConstants&) = default;
};

inline NormalizationConstants fit_normalization(const ComplianceField& c) {
  NormalizationConstants k{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (double v : c.values) {
    const double l = std::log10(std::max(v, kComplianceFloor));
    k.log_min = std::min(k.log_min, l);
    k.log_max = std::max(k.log_max, l);
  }
  if (c.values.empty()) k = {};
  return k;
}

inline ComplianceField apply_normalization(const ComplianceField& c, const NormalizationConstants& k) {
  ComplianceField out(c.shape);
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = k.forward(c[i]);
  return out;
}

inline ComplianceField invert_normalization(const ComplianceField& n, const NormalizationConstants& k) {
  ComplianceField out(n.shape);
  for (std::size_t i = 0; i < n.size(); ++i) out[i] = k.inverse(n[i]);
  return out;
}

struct NormalizedCompliance {
  ComplianceField field;
  NormalizationConstants constants;
};

/// log10, then min-max to [0,1]. A constant field maps to zeros.
inline NormalizedCompliance normalize_compliance(const ComplianceField& c) {
  const auto k = fit_normalization(c);
  return {apply_normalization(c, k), k};
}

/// Indices of the retained frames: the first frame, every frame whose RMS
/// distance to the last retained one exceeds `tolerance`, and the last frame.
/// Picks too close to the last frame are dropped in its favour.
inline std::vector<std::size_t> curate_indices(const std::vector<DensityField>& trace, double tolerance) {
  TOPOPT_REQUIRE(!trace.empty(), ErrorKind::InvalidArgument, "cannot curate an empty trace");
  std::vector<std::size_t> keep{0};
  for (std::size_t i = 1; i < trace.size(); ++i)
    if (normalized_l2(trace[i], trace[keep.back()]) > tolerance) keep.push_back(i);
  const std::size_t last = trace.size() - 1;
  if (keep.back() != last) {
    while (keep.size() > 1 && normalized_l2(trace[keep.back()], trace[last]) <= tolerance) keep.pop_back();
    keep.push_back(last);
  }
  return keep;
}

inline std::vector<DensityField> curate_unique_densities(const std::vector<DensityField>& trace,
                                                         double tolerance = 0.01) {
  std::vector<DensityField> out;
  for (auto i : curate_indices(trace, tolerance)) out.push_back(trace[i]);
  return out;
}

inline DensityField binarize_density(const DensityField& d, double threshold = 0.5) {
  DensityField out(d.shape);
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] >= threshold ? 1.0 : 0.0;
  return out;
}

/// True when `candidate` is at least `tolerance` (RMS) away from every
/// density already in the library.
inline bool accept_unique(const DensityField& candidate, const std::vector<DensityField>& library,
                          double tolerance) {
  for (const auto& d : library)
    if (normalized_l2(candidate, d) < tolerance) return false;
  return true;
}

}  // namespace topopt::datagen
