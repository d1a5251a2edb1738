// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "topopt/datagen/dataset.hpp"
#include "topopt/fem/compliance.hpp"

using namespace topopt;
using namespace topopt::datagen;

namespace {

GenConfig small2d(int n = 12) {
  GenConfig c;
  c.shape = GridShape::make2d(n, n);
  c.exclusion_radius = 2.0;
  return c;
}

template <class Tag>
Field<Tag> random_field(GridShape s, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  Field<Tag> f(s);
  for (auto& v : f.values) v = ud(rng);
  return f;
}

}  // namespace

TEST(SampleProblem, ReplaysFromSeed) {
  for (auto cfg : {small2d(), GenConfig::defaults3d()}) {
    cfg.shape = cfg.shape.dimensionality == 3 ? GridShape::make3d(8, 8, 8) : cfg.shape;
    Rng a = make_stream(42, 7), b = make_stream(42, 7);
    const auto pa = sample_problem(a, cfg);
    const auto pb = sample_problem(b, cfg);
    EXPECT_TRUE(pa == pb);
    Rng c = make_stream(42, 8);
    EXPECT_FALSE(pa == sample_problem(c, cfg));
  }
}

TEST(SampleProblem, ThreeDimensionalSupportsAreNonCollinearAndOnOneFace) {
  auto cfg = GenConfig::defaults3d();
  cfg.shape = GridShape::make3d(6, 6, 6);
  cfg.exclusion_radius = 1.0;
  Rng rng(3);
  const fem::StructuredGrid g(cfg.shape);
  for (int i = 0; i < 2000; ++i) {
    const auto sp = sample_problem(rng, cfg);
    ASSERT_EQ(sp.fixed_nodes.size(), 3u);
    std::array<std::array<int, 3>, 3> p;
    for (int k = 0; k < 3; ++k) p[k] = g.node_coords(sp.fixed_nodes[k]);
    EXPECT_FALSE(detail::collinear(p[0], p[1], p[2]));
    bool shared_face = false;
    for (int a = 0; a < 3; ++a)
      for (int lvl : {0, 6}) shared_face |= p[0][a] == lvl && p[1][a] == lvl && p[2][a] == lvl;
    EXPECT_TRUE(shared_face);
    EXPECT_TRUE(fem::constrains_rigid_modes(g, sp.problem.loads.fixed_dofs));
  }
}

TEST(SampleProblem, LoadsRespectExclusionRadiusOver10000Draws) {
  for (int dim : {2, 3}) {
    GenConfig cfg = dim == 2 ? small2d(16) : GenConfig::defaults3d();
    if (dim == 3) cfg.shape = GridShape::make3d(8, 8, 8);
    cfg.exclusion_radius = 3.0;
    const fem::StructuredGrid g(cfg.shape);
    Rng rng(11 + dim);
    for (int i = 0; i < 10000; ++i) {
      const auto sp = sample_problem(rng, cfg);
      for (const auto& l : sp.problem.loads.nodal_loads)
        for (auto s : sp.fixed_nodes)
          ASSERT_GT(detail::lattice_distance(g.node_coords(l.node), g.node_coords(s)), 3.0);
    }
  }
}

TEST(SampleProblem, ProblemsAreWellPosed) {
  auto cfg = small2d(10);
  Rng rng(5);
  const fem::StructuredGrid g(cfg.shape);
  for (int i = 0; i < 500; ++i) {
    const auto sp = sample_problem(rng, cfg);
    EXPECT_TRUE(fem::constrains_rigid_modes(g, sp.problem.loads.fixed_dofs));
    EXPECT_GE(sp.problem.target_vf, cfg.vf_min);
    EXPECT_LE(sp.problem.target_vf, cfg.vf_max);
    std::array<double, 3> total{0, 0, 0};
    double magnitude = 0.0;
    for (const auto& l : sp.problem.loads.nodal_loads) {
      for (int c = 0; c < 3; ++c) total[c] += l.force[c];
      magnitude += std::hypot(l.force[0], l.force[1]);
    }
    const double net = std::hypot(total[0], total[1]);
    switch (sp.kind) {
      case LoadKind::Moment:
        EXPECT_EQ(sp.problem.loads.nodal_loads.size(), 2u);
        EXPECT_NEAR(net, 0.0, 1e-12);
        EXPECT_GE(magnitude, 2 * cfg.magnitude_min - 1e-12);
        EXPECT_LE(magnitude, 2 * cfg.magnitude_max + 1e-12);
        break;
      default:
        EXPECT_GE(net, cfg.magnitude_min - 1e-12);
        EXPECT_LE(net, cfg.magnitude_max + 1e-12);
    }
  }
}

TEST(SampleProblem, ExhaustsWhenNoDrawIsAdmissible) {
  auto cfg = small2d(6);
  cfg.exclusion_radius = 100.0;
  Rng rng(1);
  try {
    sample_problem(rng, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SamplingExhausted);
  }
}

TEST(RejectDuplicates, Basics) {
  const auto s = GridShape::make2d(4, 4);
  const auto d = random_field<DensityTag>(s, 2);
  EXPECT_TRUE(accept_unique(d, {}, 0.05));
  EXPECT_FALSE(accept_unique(d, {d}, 0.05));
  DensityField a(s), b(s);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      a.at(x, y) = (x + y) % 2;
      b.at(x, y) = 1 - a.at(x, y);
    }
  EXPECT_DOUBLE_EQ(normalized_l2(a, b), 1.0);
  EXPECT_TRUE(accept_unique(a, {b}, 0.999));
}

TEST(NormalizeCompliance, HandExample) {
  ComplianceField c(GridShape::make2d(3, 1), {1.0, 10.0, 100.0});
  const auto n = normalize_compliance(c);
  EXPECT_NEAR(n.field[0], 0.0, 1e-15);
  EXPECT_NEAR(n.field[1], 0.5, 1e-15);
  EXPECT_NEAR(n.field[2], 1.0, 1e-15);
  EXPECT_NEAR(n.constants.log_min, 0.0, 1e-15);
  EXPECT_NEAR(n.constants.log_max, 2.0, 1e-15);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(n.constants.inverse(n.field[i]), c[i], 1e-12 * c[i]);
}

TEST(NormalizeCompliance, ConstantFieldIsZero) {
  const auto n = normalize_compliance(ComplianceField(GridShape::make2d(4, 3), 7.5));
  for (double v : n.field.values) EXPECT_EQ(v, 0.0);
}

TEST(NormalizeCompliance, ZeroIsClampedBeforeLog) {
  ComplianceField c(GridShape::make2d(2, 1), {0.0, 1.0});
  const auto n = normalize_compliance(c);
  EXPECT_EQ(n.field[0], 0.0);
  EXPECT_EQ(n.field[1], 1.0);
  EXPECT_DOUBLE_EQ(n.constants.log_min, -12.0);
}

TEST(NormalizeCompliance, OrderIsomorphicOnRandomFields) {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> ud(-6.0, 3.0);
  ComplianceField c(GridShape::make2d(20, 10));
  for (auto& v : c.values) v = std::pow(10.0, ud(rng));
  const auto n = normalize_compliance(c);
  std::vector<std::size_t> ri(c.size()), ro(c.size());
  std::iota(ri.begin(), ri.end(), 0);
  ro = ri;
  std::sort(ri.begin(), ri.end(), [&](auto a, auto b) { return c[a] < c[b]; });
  std::sort(ro.begin(), ro.end(), [&](auto a, auto b) { return n.field[a] < n.field[b]; });
  EXPECT_EQ(ri, ro);
  for (double v : n.field.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Augment, TwoByTwoClockwise) {
  // Tensor [[a,b],[c,d]] with row 0 = y index 0.
  DensityField f(GridShape::make2d(2, 2), {1.0, 2.0, 3.0, 4.0});  // a b / c d
  const auto r = transform_field(f, 1);
  EXPECT_EQ(r.values, (std::vector<double>{3.0, 1.0, 4.0, 2.0}));  // c a / d b
  EXPECT_STREQ(symmetry_op(2, 1).name, "rot90cw");
}

TEST(Augment, FourQuarterTurnsAreIdentity) {
  const auto f2 = random_field<DensityTag>(GridShape::make2d(7, 7), 1);
  auto g = f2;
  for (int k = 0; k < 4; ++k) g = transform_field(g, 1);
  EXPECT_EQ(g, f2);
  const auto f3 = random_field<DensityTag>(GridShape::make3d(5, 5, 5), 2);
  for (int op : {1, 4, 7}) {
    auto h = f3;
    for (int k = 0; k < 4; ++k) h = transform_field(h, op);
    EXPECT_EQ(h, f3) << symmetry_op(3, op).name;
  }
}

TEST(Augment, EveryOpComposedWithInverseIsIdentity) {
  for (int dim : {2, 3}) {
    const auto s = dim == 2 ? GridShape::make2d(6, 6) : GridShape::make3d(4, 4, 4);
    const auto f = random_field<ComplianceTag>(s, 9);
    const auto& ops = symmetry_ops(dim);
    for (int op = 0; op < static_cast<int>(ops.size()); ++op) {
      const int inv = inverse_op(dim, op);
      EXPECT_EQ(transform_field(transform_field(f, op), inv), f) << ops[op].name;
      EXPECT_EQ(compose(ops[op].map, ops[inv].map), AxisMap{});
    }
  }
}

TEST(Augment, MirrorsAreInvolutions) {
  const auto f = random_field<DensityTag>(GridShape::make3d(5, 5, 5), 4);
  for (int op : {10, 11, 12}) EXPECT_EQ(transform_field(transform_field(f, op), op), f);
  const auto g = random_field<DensityTag>(GridShape::make2d(5, 5), 4);
  for (int op : {4, 5, 6, 7}) EXPECT_EQ(transform_field(transform_field(g, op), op), g);
}

TEST(Augment, TwoDimensionalSetIsClosedUnderComposition) {
  const auto& ops = symmetry_ops_2d();
  for (const auto& a : ops)
    for (const auto& b : ops) {
      const auto c = compose(a.map, b.map);
      EXPECT_TRUE(std::any_of(ops.begin(), ops.end(), [&](const auto& o) { return o.map == c; }));
    }
}

TEST(Augment, CompositionMatchesSequentialApplication) {
  const auto f = random_field<DensityTag>(GridShape::make3d(4, 4, 4), 5);
  const auto& ops = symmetry_ops_3d();
  for (std::size_t a = 0; a < ops.size(); ++a)
    for (std::size_t b = 0; b < ops.size(); ++b)
      EXPECT_EQ(transform_field(transform_field(f, ops[a].map), ops[b].map),
                transform_field(f, compose(ops[a].map, ops[b].map)));
}

TEST(Augment, RejectsNonSquareDomain) {
  DensityField f(GridShape::make2d(4, 3));
  try {
    transform_field(f, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonSquareDomain);
  }
  EXPECT_THROW(augment(f, f, 0), Error);
}

TEST(Augment, FeaEquivariance2D) {
  auto cfg = small2d(8);
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto sp = sample_problem(rng, cfg);
    const auto rho = random_field<DensityTag>(cfg.shape, 30 + trial);
    const auto base = fem::solve(sp.problem, rho);
    const ComplianceField c0 = base.element_compliance;
    for (int op = 0; op < 8; ++op) {
      const auto moved = fem::solve(transform_problem(sp.problem, op), transform_field(rho, op));
      const auto expect = transform_field(c0, op);
      for (std::size_t e = 0; e < expect.size(); ++e)
        EXPECT_NEAR(moved.element_compliance[e], expect[e], 1e-8 * std::max(1.0, std::abs(expect[e])));
      EXPECT_NEAR(moved.total_compliance, base.total_compliance, 1e-8 * base.total_compliance);
    }
  }
}

TEST(Augment, FeaEquivariance3D) {
  auto cfg = GenConfig::defaults3d();
  cfg.shape = GridShape::make3d(4, 4, 4);
  cfg.exclusion_radius = 1.0;
  Rng rng(22);
  const auto sp = sample_problem(rng, cfg);
  const auto rho = random_field<DensityTag>(cfg.shape, 3);
  fem::SolverOptions opt;
  opt.rel_tolerance = 1e-12;
  const auto base = fem::solve(sp.problem, rho, opt);
  const ComplianceField c0 = base.element_compliance;
  for (int op = 0; op < 13; ++op) {
    const auto moved = fem::solve(transform_problem(sp.problem, op), transform_field(rho, op), opt);
    const auto expect = transform_field(c0, op);
    for (std::size_t e = 0; e < expect.size(); ++e)
      EXPECT_NEAR(moved.element_compliance[e], expect[e], 1e-8 * std::max(1.0, std::abs(expect[e])));
  }
}

TEST(Curate, IdenticalTraceKeepsEndpoints) {
  const DensityField d(GridShape::make2d(3, 3), 0.4);
  const std::vector<DensityField> trace(6, d);
  EXPECT_EQ(curate_indices(trace, 0.01), (std::vector<std::size_t>{0, 5}));
  EXPECT_EQ(curate_unique_densities(trace).size(), 2u);
  EXPECT_EQ(curate_indices({d}, 0.01), (std::vector<std::size_t>{0}));
}

TEST(Curate, DistinctTraceWithZeroToleranceIsKept) {
  std::vector<DensityField> trace;
  for (int i = 0; i < 7; ++i) trace.push_back(DensityField(GridShape::make2d(2, 2), 0.1 * i));
  const auto out = curate_unique_densities(trace, 0.0);
  EXPECT_EQ(out, trace);
}

TEST(Curate, PlateauCollapsesAgainstPairwiseOracle) {
  const auto s = GridShape::make2d(4, 4);
  std::vector<DensityField> trace;
  // ramp, plateau with tiny jitter, jump, plateau
  for (int i = 0; i < 4; ++i) trace.push_back(DensityField(s, 0.2 + 0.1 * i));
  for (int i = 0; i < 5; ++i) trace.push_back(DensityField(s, 0.5 + 1e-4 * i));
  trace.push_back(DensityField(s, 0.9));
  for (int i = 0; i < 3; ++i) trace.push_back(DensityField(s, 0.9 + 1e-4 * i));
  const double tol = 0.01;
  // Oracle: full distance matrix, then walk it.
  const std::size_t n = trace.size();
  std::vector<std::vector<double>> dist(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) dist[i][j] = normalized_l2(trace[i], trace[j]);
  std::vector<std::size_t> oracle{0};
  for (std::size_t i = 1; i + 1 < n; ++i)
    if (dist[i][oracle.back()] > tol && dist[i][n - 1] > tol) oracle.push_back(i);
  oracle.push_back(n - 1);
  const auto got = curate_indices(trace, tol);
  EXPECT_EQ(got, oracle);
  EXPECT_EQ(got, (std::vector<std::size_t>{0, 1, 2, 3, 12}));
  for (std::size_t k = 1; k < got.size(); ++k) EXPECT_GT(dist[got[k - 1]][got[k]], tol);
}

TEST(Binarize, Conventions) {
  const auto s = GridShape::make2d(5, 5);
  for (double v : binarize_density(DensityField(s, 0.5)).values) EXPECT_EQ(v, 1.0);
  const auto r = random_field<DensityTag>(s, 6);
  for (double v : binarize_density(r, 0.0).values) EXPECT_EQ(v, 1.0);
  for (double t : {0.1, 0.33, 0.5, 0.9}) {
    const auto b = binarize_density(r, t);
    const auto count = std::count_if(r.values.begin(), r.values.end(), [&](double v) { return v >= t; });
    EXPECT_DOUBLE_EQ(b.mean(), double(count) / double(r.size()));
    for (double v : b.values) EXPECT_TRUE(v == 0.0 || v == 1.0);
  }
}

TEST(GenerateDataset, SingleSampleIsReproducible) {
  auto cfg = small2d(10);
  cfg.n_samples = 1;
  cfg.rng_seed = 77;
  const auto a = generate_dataset(cfg);
  const auto b = generate_dataset(cfg);
  ASSERT_EQ(a.samples.size(), 1u);
  EXPECT_EQ(a.manifest.dump(), b.manifest.dump());
  EXPECT_EQ(a.samples[0].densities, b.samples[0].densities);
  EXPECT_EQ(a.samples[0].c0, b.samples[0].c0);
}

TEST(GenerateDataset, SplitsAndStoredRanges) {
  auto cfg = small2d(10);
  cfg.n_samples = 9;
  cfg.rng_seed = 5;
  const auto ds = generate_dataset(cfg);
  ASSERT_EQ(ds.samples.size(), 9u);
  const auto n_train = ds.split(Split::Train).size();
  EXPECT_LE(std::abs(double(n_train) - 0.75 * 9), 1.0);
  EXPECT_EQ(ds.manifest["n_train"].get<std::size_t>() + ds.manifest["n_test"].get<std::size_t>(), 9u);
  std::vector<DensityField> finals;
  for (const auto& r : ds.samples) {
    for (double v : r.c0.values) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    for (const auto& c : r.compliances)
      for (double v : c.values) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    for (const auto& d : r.densities)
      for (double v : d.values) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    for (double v : r.final_binary.values) ASSERT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_EQ(r.frame_iteration.front(), 0);
    EXPECT_EQ(r.frame_iteration.back(), r.iteration_count);
    for (std::size_t k = 1; k < r.densities.size(); ++k)
      EXPECT_GT(normalized_l2(r.densities[k], r.densities[k - 1]), cfg.curation_tolerance);
    for (const auto& f : finals) EXPECT_GE(normalized_l2(f, r.final_density()), cfg.duplicate_tolerance - 1e-6);
    finals.push_back(r.final_density());
  }
}

TEST(GenerateDataset, StoredComplianceIsEquivariant) {
  auto cfg = small2d(8);
  cfg.n_samples = 2;
  cfg.rng_seed = 12;
  const auto ds = generate_dataset(cfg);
  for (const auto& r : ds.samples) {
    const DensityField uniform(cfg.shape, r.target_vf());
    const auto raw = fem::solve(r.problem, uniform);
    const auto stored = invert_normalization(r.c0, r.c0_norm);
    for (std::size_t e = 0; e < stored.size(); ++e)
      EXPECT_NEAR(stored[e], raw.element_compliance[e], 1e-6 * raw.element_compliance[e]);
    for (int op = 0; op < 8; ++op) {
      const auto moved = fem::solve(transform_problem(r.problem, op), uniform);
      const auto expect = transform_field(raw.element_compliance, op);
      for (std::size_t e = 0; e < expect.size(); ++e)
        EXPECT_NEAR(moved.element_compliance[e], expect[e], 1e-6 * std::max(1.0, expect[e]));
    }
  }
}
