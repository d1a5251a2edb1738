// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "topopt/datagen/config.hpp"
#include "topopt/fem/model.hpp"

namespace topopt::datagen {

using Rng = std::mt19937_64;

/// Independent, replayable stream for attempt `stream` of a run seeded with `seed`.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x70u};
  return Rng(seq);
}

struct SampledProblem {
  fem::Problem problem;
  LoadKind kind = LoadKind::Nodal;
  std::vector<std::size_t> fixed_nodes;  // every dof of these nodes is fixed
  friend bool operator==(const SampledProblem& a, const SampledProblem& b) {
    return a.kind == b.kind && a.fixed_nodes == b.fixed_nodes && a.problem.loads == b.problem.loads &&
           a.problem.target_vf == b.problem.target_vf && a.problem.grid.shape == b.problem.grid.shape;
  }
};

namespace detail {

using Lattice = std::array<int, 3>;

inline double lattice_distance(const Lattice& a, const Lattice& b) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s += double(a[c] - b[c]) * double(a[c] - b[c]);
  return std::sqrt(s);
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(std::log(lo) + uniform01(rng) * (std::log(hi) - std::log(lo)));
}

/// Uniform direction on the circle (2D) or the sphere (3D).
inline std::array<double, 3> random_direction(Rng& rng, int dim) {
  if (dim == 2) {
    const double t = 2.0 * M_PI * uniform01(rng);
    return {std::cos(t), std::sin(t), 0.0};
  }
  const double z = 2.0 * uniform01(rng) - 1.0;
  const double t = 2.0 * M_PI * uniform01(rng);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(t), r * std::sin(t), z};
}

/// A boundary face: lattice axis `axis` held at `level` (0 or nodes-1).
struct Face {
  int axis = 0;
  int level = 0;
};

inline Face random_face(Rng& rng, const fem::StructuredGrid& g) {
  const int dim = g.dim();
  const int f = uniform_int(rng, 0, 2 * dim - 1);
  const int axis = f / 2;
  return {axis, (f % 2) ? g.shape.n[axis] : 0};
}

inline Lattice random_node_on_face(Rng& rng, const fem::StructuredGrid& g, const Face& f) {
  Lattice p{0, 0, 0};
  for (int a = 0; a < g.dim(); ++a) p[a] = a == f.axis ? f.level : uniform_int(rng, 0, g.shape.n[a]);
  return p;
}

inline std::size_t node_of(const fem::StructuredGrid& g, const Lattice& p) { return g.node_index(p[0], p[1], p[2]); }

inline bool collinear(const Lattice& a, const Lattice& b, const Lattice& c) {
  const double u[3] = {double(b[0] - a[0]), double(b[1] - a[1]), double(b[2] - a[2])};
  const double v[3] = {double(c[0] - a[0]), double(c[1] - a[1]), double(c[2] - a[2])};
  const double x = u[1] * v[2] - u[2] * v[1];
  const double y = u[2] * v[0] - u[0] * v[2];
  const double z = u[0] * v[1] - u[1] * v[0];
  return x * x + y * y + z * z == 0.0;
}

/// In-face tangent axes of a face.
inline std::vector<int> tangent_axes(const fem::StructuredGrid& g, const Face& f) {
  std::vector<int> t;
  for (int a = 0; a < g.dim(); ++a)
    if (a != f.axis) t.push_back(a);
  return t;
}

}  // namespace detail

/// Draws supports, loads and a target volume fraction. Candidates that put a
/// load within `exclusion_radius` of a support (or, in 3D, collinear support
/// triples) are redrawn up to `max_draws` times.
inline SampledProblem sample_problem(Rng& rng, const GenConfig& cfg) {
  using namespace detail;
  cfg.validate();
  const fem::StructuredGrid grid(cfg.shape);
  const int dim = grid.dim();
  const std::vector<LoadKind> kinds(cfg.load_kinds.begin(), cfg.load_kinds.end());

  for (int draw = 0; draw < cfg.max_draws; ++draw) {
    SampledProblem out;
    out.problem.grid = grid;
    out.problem.material = cfg.material;
    std::vector<Lattice> supports;

    if (dim == 3) {
      const Face f = random_face(rng, grid);
      for (int s = 0; s < 3; ++s) supports.push_back(random_node_on_face(rng, grid, f));
      if (collinear(supports[0], supports[1], supports[2])) continue;
    } else {
      // One or two contiguous clamped segments along boundary edges.
      const int segments = uniform_int(rng, 1, 2);
      for (int s = 0; s < segments; ++s) {
        const Face f = random_face(rng, grid);
        const int t = 1 - f.axis;
        const int len_max = grid.shape.n[t] + 1;
        const int len = uniform_int(rng, 2, std::max(2, len_max / 2));
        const int start = uniform_int(rng, 0, len_max - len);
        for (int k = 0; k < len; ++k) {
          Lattice p{0, 0, 0};
          p[f.axis] = f.level;
          p[t] = start + k;
          supports.push_back(p);
        }
      }
    }

    const LoadKind kind = kinds[static_cast<std::size_t>(uniform_int(rng, 0, int(kinds.size()) - 1))];
    const Face lf = random_face(rng, grid);
    const Lattice base = random_node_on_face(rng, grid, lf);
    const double mag = log_uniform(rng, cfg.magnitude_min, cfg.magnitude_max);
    const auto tangents = tangent_axes(grid, lf);
    std::vector<std::pair<Lattice, std::array<double, 3>>> loads;

    switch (kind) {
      case LoadKind::Nodal: {
        loads.push_back({base, {}});
        const auto d = random_direction(rng, dim);
        for (int c = 0; c < 3; ++c) loads.back().second[c] = mag * d[c];
        break;
      }
      case LoadKind::Surface: {
        // Total force spread evenly over a short run (2D) or square patch (3D).
        const int w = uniform_int(rng, 2, 4);
        const auto d = random_direction(rng, dim);
        std::vector<Lattice> patch;
        const int wb = dim == 3 ? w : 1;
        for (int a = 0; a < w; ++a)
          for (int b = 0; b < wb; ++b) {
            Lattice p = base;
            p[tangents[0]] += a;
            if (dim == 3) p[tangents[1]] += b;
            if (p[tangents[0]] > grid.shape.n[tangents[0]]) continue;
            if (dim == 3 && p[tangents[1]] > grid.shape.n[tangents[1]]) continue;
            patch.push_back(p);
          }
        for (const auto& p : patch) {
          std::array<double, 3> f{};
          for (int c = 0; c < 3; ++c) f[c] = mag * d[c] / double(patch.size());
          loads.push_back({p, f});
        }
        break;
      }
      case LoadKind::Moment: {
        // Nodal-equivalent couple: +F and -F on neighbouring nodes, F normal to their offset.
        const int t = tangents[static_cast<std::size_t>(uniform_int(rng, 0, int(tangents.size()) - 1))];
        Lattice second = base;
        second[t] += base[t] < grid.shape.n[t] ? 1 : -1;
        std::array<double, 3> d{};
        if (dim == 2) {
          d[lf.axis] = uniform01(rng) < 0.5 ? 1.0 : -1.0;
        } else {
          const double ang = 2.0 * M_PI * uniform01(rng);
          int k = 0;
          for (int a = 0; a < 3; ++a)
            if (a != t) d[a] = k++ == 0 ? std::cos(ang) : std::sin(ang);
        }
        std::array<double, 3> f1{}, f2{};
        for (int c = 0; c < 3; ++c) {
          f1[c] = mag * d[c];
          f2[c] = -mag * d[c];
        }
        loads.push_back({base, f1});
        loads.push_back({second, f2});
        break;
      }
    }

    bool excluded = false;
    for (const auto& [p, f] : loads)
      for (const auto& s : supports)
        if (lattice_distance(p, s) <= cfg.exclusion_radius) excluded = true;
    if (excluded) continue;

    for (const auto& s : supports) out.fixed_nodes.push_back(node_of(grid, s));
    std::sort(out.fixed_nodes.begin(), out.fixed_nodes.end());
    out.fixed_nodes.erase(std::unique(out.fixed_nodes.begin(), out.fixed_nodes.end()), out.fixed_nodes.end());
    for (auto n : out.fixed_nodes) out.problem.loads.fix_node(n, dim);
    for (const auto& [p, f] : loads) out.problem.loads.nodal_loads.push_back({node_of(grid, p), f});
    out.kind = kind;
    out.problem.target_vf = cfg.vf_min + uniform01(rng) * (cfg.vf_max - cfg.vf_min);
    out.problem.loads.validate(grid);
    return out;
  }
  throw Error(ErrorKind::SamplingExhausted,
              "no admissible problem in " + std::to_string(cfg.max_draws) + " draws");
}

}  // namespace topopt::datagen
