// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "topopt/fem/assembly.hpp"

namespace topopt::fem {

enum class SolverKind { Auto, Direct, Pcg };

struct SolverOptions {
  SolverKind kind = SolverKind::Auto;
  double rel_tolerance = 1e-8;
  /// Iteration cap as a multiple of the dof count.
  std::size_t max_iter_factor = 10;
  /// Auto picks the direct path up to this many elements (2D only).
  std::size_t direct_max_elements = 64 * 64;
};

struct SolveStats {
  std::size_t iterations = 0;
  double relative_residual = 0.0;
  bool used_direct = false;
};

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double relative_residual(const CsrMatrix& k, const std::vector<double>& u, const std::vector<double>& f) {
  std::vector<double> r;
  k.multiply(u, r);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= f[i];
  const double nf = norm2(f);
  return nf == 0.0 ? norm2(r) : norm2(r) / nf;
}

/// Jacobi-preconditioned conjugate gradient. `x` holds the initial guess on entry.
inline SolveStats pcg_solve(const CsrMatrix& k, const std::vector<double>& f, std::vector<double>& x,
                            double rel_tol, std::size_t max_iter) {
  const std::size_t n = k.n;
  SolveStats stats;
  if (x.size() != n) x.assign(n, 0.0);
  const double nf = norm2(f);
  if (nf == 0.0) {
    x.assign(n, 0.0);
    return stats;
  }
  std::vector<double> inv_diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = k.coeff(i, i);
    TOPOPT_REQUIRE(d > 0.0, ErrorKind::SingularSystem, "non-positive diagonal entry");
    inv_diag[i] = 1.0 / d;
  }
  std::vector<double> r, z(n), p(n), q;
  k.multiply(x, r);
  for (std::size_t i = 0; i < n; ++i) r[i] = f[i] - r[i];
  double rnorm = norm2(r);
  for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
  p = z;
  double rz = 0.0;
  for (std::size_t i = 0; i < n; ++i) rz += r[i] * z[i];

  std::size_t it = 0;
  while (rnorm / nf > rel_tol) {
    if (it >= max_iter)
      throw Error(ErrorKind::NoConvergence, "PCG exceeded " + std::to_string(max_iter) +
                                                " iterations (relative residual " +
                                                std::to_string(rnorm / nf) + ")");
    k.multiply(p, q);
    double pq = 0.0;
    for (std::size_t i = 0; i < n; ++i) pq += p[i] * q[i];
    if (!(pq > 0.0)) throw Error(ErrorKind::SingularSystem, "PCG breakdown: matrix not positive definite");
    const double alpha = rz / pq;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    double rz_new = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = inv_diag[i] * r[i];
      rz_new += r[i] * z[i];
    }
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    rnorm = norm2(r);
    ++it;
  }
  stats.iterations = it;
  stats.relative_residual = rnorm / nf;
  return stats;
}

/// Sparse LDL^T factorisation of the (symmetric) constrained system.
inline SolveStats direct_solve(const CsrMatrix& k, const std::vector<double>& f, std::vector<double>& x) {
  using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
  std::vector<Eigen::Triplet<double, int>> trip;
  trip.reserve(k.val.size());
  for (std::size_t r = 0; r < k.n; ++r)
    for (std::size_t p = k.row_ptr[r]; p < k.row_ptr[r + 1]; ++p)
      if (k.col[p] <= r) trip.emplace_back(static_cast<int>(r), static_cast<int>(k.col[p]), k.val[p]);
  SpMat a(static_cast<int>(k.n), static_cast<int>(k.n));
  a.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt(a);
  TOPOPT_REQUIRE(ldlt.info() == Eigen::Success, ErrorKind::SingularSystem, "LDL^T factorisation failed");
  const Eigen::VectorXd d = ldlt.vectorD();
  TOPOPT_REQUIRE((d.array() > 0.0).all(), ErrorKind::SingularSystem,
                 "stiffness matrix is not positive definite");
  const Eigen::Map<const Eigen::VectorXd> fb(f.data(), static_cast<Eigen::Index>(f.size()));
  const Eigen::VectorXd u = ldlt.solve(fb);
  x.assign(u.data(), u.data() + u.size());
  SolveStats stats;
  stats.used_direct = true;
  stats.relative_residual = relative_residual(k, x, f);
  return stats;
}

/// Solves K U = F. `warm_start` seeds the iterative path.
inline std::vector<double> solve_displacements(const LinearSystem& sys, const SolverOptions& opt = {},
                                               const std::vector<double>* warm_start = nullptr,
                                               SolveStats* stats_out = nullptr) {
  const auto& k = sys.stiffness;
  std::vector<double> u;
  SolveStats stats;
  const bool direct = opt.kind == SolverKind::Direct ||
                      (opt.kind == SolverKind::Auto && sys.dim == 2 &&
                       sys.element_count <= opt.direct_max_elements);
  if (norm2(sys.force) == 0.0) {
    u.assign(k.n, 0.0);
  } else if (direct) {
    stats = direct_solve(k, sys.force, u);
    if (stats.relative_residual > opt.rel_tolerance) {
      // One PCG polish from the factorised solution.
      const auto s2 = pcg_solve(k, sys.force, u, opt.rel_tolerance, opt.max_iter_factor * k.n);
      stats.iterations = s2.iterations;
      stats.relative_residual = s2.relative_residual;
    }
  } else {
    if (warm_start != nullptr && warm_start->size() == k.n) u = *warm_start;
    stats = pcg_solve(k, sys.force, u, opt.rel_tolerance, opt.max_iter_factor * k.n);
  }
  if (stats_out != nullptr) *stats_out = stats;
  return u;
}

}  // namespace topopt::fem
