// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "topopt/fem/compliance.hpp"
#include "topopt/io/vtk.hpp"
#include "topopt/voxel/tet_io.hpp"

using namespace topopt;
using namespace topopt::voxel;

namespace {

// Unit cube split into six tets around the main diagonal (0,0,0)-(1,1,1).
TetMesh six_tet_cube() {
  TetMesh m;
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i) m.nodes.push_back({double(i), double(j), double(k)});
  // corner id = i + 2j + 4k; 0 and 7 are the diagonal ends
  m.tets = {{0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7}, {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7}};
  return m;
}

double linear(const Vec3& p) { return 1.0 + 2.0 * p[0] + 3.0 * p[1] + 4.0 * p[2]; }

// Same-side test with signed volumes, independent of barycentric().
bool point_in_tet(const std::array<Vec3, 4>& v, const Vec3& p) {
  auto vol = [](const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    const Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const Vec3 w{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    const Vec3 z{d[0] - a[0], d[1] - a[1], d[2] - a[2]};
    return u[0] * (w[1] * z[2] - w[2] * z[1]) - u[1] * (w[0] * z[2] - w[2] * z[0]) + u[2] * (w[0] * z[1] - w[1] * z[0]);
  };
  const double full = vol(v[0], v[1], v[2], v[3]);
  const double s[4] = {vol(p, v[1], v[2], v[3]), vol(v[0], p, v[2], v[3]), vol(v[0], v[1], p, v[3]),
                       vol(v[0], v[1], v[2], p)};
  for (double x : s)
    if (x / full < -1e-10) return false;
  return true;
}

}  // namespace

TEST(Barycentric, CentroidAndVertex) {
  const std::array<Vec3, 4> t{{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const auto c = barycentric(t, {0.25, 0.25, 0.25});
  for (double l : c) EXPECT_NEAR(l, 0.25, 1e-15);
  const auto v = barycentric(t, {0, 0, 0});
  EXPECT_NEAR(v[0], 1.0, 1e-15);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(v[i], 0.0, 1e-15);
}

TEST(Barycentric, ReconstructsRandomInteriorPoints) {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<Vec3, 4> t;
    for (auto& p : t)
      for (auto& x : p) x = ud(rng);
    std::array<double, 4> w;
    double s = 0.0;
    for (auto& x : w) s += (x = std::abs(ud(rng)) + 1e-3);
    Vec3 p{0, 0, 0};
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 3; ++i) p[i] += w[c] / s * t[c][i];
    std::array<double, 4> l;
    try {
      l = barycentric(t, p);
    } catch (const Error&) {
      continue;  // a nearly flat random tet
    }
    EXPECT_NEAR(l[0] + l[1] + l[2] + l[3], 1.0, 1e-12);
    EXPECT_TRUE(inside(l));
    Vec3 back{0, 0, 0};
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 3; ++i) back[i] += l[c] * t[c][i];
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(back[i], p[i], 1e-12);
  }
}

TEST(Barycentric, DegenerateTetThrows) {
  const std::array<Vec3, 4> flat{{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}}};
  try {
    barycentric(flat, {0.2, 0.2, 0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateTet);
  }
}

TEST(Voxelize, ConstantFieldIsReproduced) {
  auto m = six_tet_cube();
  m.nodal_fields["rho"] = std::vector<double>(8, 0.37);
  const auto g = voxelize(m, {5, 6, 7});
  for (std::size_t i = 0; i < g.size(); ++i) {
    ASSERT_GE(g.owner[i], 0);
    EXPECT_NEAR(g.fields.at("rho")[i], 0.37, 1e-14);
  }
}

TEST(Voxelize, LinearFieldExactOnSixTetCube16) {
  auto m = six_tet_cube();
  std::vector<double> f;
  for (const auto& p : m.nodes) f.push_back(linear(p));
  m.nodal_fields["f"] = f;
  const auto g = voxelize(m, {16, 16, 16});
  for (int k = 0; k < 16; ++k)
    for (int j = 0; j < 16; ++j)
      for (int i = 0; i < 16; ++i) {
        const auto idx = g.shape().index(i, j, k);
        ASSERT_GE(g.owner[idx], 0);
        EXPECT_NEAR(g.fields.at("f")[idx], linear(g.center(i, j, k)), 1e-10);
      }
}

TEST(Voxelize, TwoTetMeshMatchesBruteForce) {
  TetMesh m;
  m.nodes = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}};
  m.tets = {{0, 1, 2, 3}, {4, 1, 2, 3}};
  m.nodal_fields["a"] = {0.0, 1.0, 2.0, 3.0, 10.0};
  const auto g = voxelize(m, {4, 4, 4});
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) {
        const auto c = g.center(i, j, k);
        int owner = -1;
        double value = 0.0;
        for (std::size_t t = 0; t < m.tets.size() && owner < 0; ++t) {
          const auto v = m.corners(t);
          if (!point_in_tet(v, c)) continue;
          owner = static_cast<int>(t);
          // value from the linear interpolant solved with Eigen
          Eigen::Matrix4d a;
          Eigen::Vector4d rhs;
          for (int r = 0; r < 4; ++r) {
            a.row(r) << 1.0, v[r][0], v[r][1], v[r][2];
            rhs(r) = m.nodal_fields["a"][static_cast<std::size_t>(m.tets[t][r])];
          }
          const Eigen::Vector4d coef = a.fullPivLu().solve(rhs);
          value = coef(0) + coef(1) * c[0] + coef(2) * c[1] + coef(3) * c[2];
        }
        const auto idx = g.shape().index(i, j, k);
        EXPECT_EQ(g.owner[idx], owner) << i << ' ' << j << ' ' << k;
        EXPECT_NEAR(g.fields.at("a")[idx], value, 1e-12);
      }
}

TEST(Voxelize, SharedFaceGoesToLowestTetIndex) {
  // Centres with i == j > k lie on the face x == y >= z shared by tets 0 and 2.
  auto m = six_tet_cube();
  m.nodal_fields["f"] = std::vector<double>(8, 1.0);
  const auto a = voxelize(m, {4, 4, 4});
  std::swap(m.tets[0], m.tets[2]);
  const auto b = voxelize(m, {4, 4, 4});
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) {
        const auto idx = a.shape().index(i, j, k);
        EXPECT_EQ(a.fields.at("f")[idx], b.fields.at("f")[idx]);
        if (i == j && k < i) {
          EXPECT_EQ(a.owner[idx], 0);
          EXPECT_EQ(b.owner[idx], 0);
        }
      }
}

TEST(Voxelize, OutsideVoxelsAreZeroAndEmptyMeshThrows) {
  TetMesh m;
  m.nodes = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  m.tets = {{0, 1, 2, 3}};
  m.nodal_fields["a"] = {5, 5, 5, 5};
  const auto g = voxelize(m, {4, 4, 4});
  const auto idx = g.shape().index(3, 3, 3);
  EXPECT_EQ(g.owner[idx], -1);
  EXPECT_EQ(g.fields.at("a")[idx], 0.0);
  TetMesh empty;
  try {
    voxelize(empty, {2, 2, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyMesh);
  }
}

TEST(ComplianceFromStrainEnergy, HandValues) {
  const auto s = GridShape::make3d(2, 1, 1);
  const auto c1 = compliance_from_strain_energy(StrainEnergyField(s, 3.0), DensityField(s, 1.0), 3.0);
  for (double v : c1.values) EXPECT_EQ(v, 3.0);
  const auto c2 = compliance_from_strain_energy(StrainEnergyField(s, 8.0), DensityField(s, 0.5), 3.0);
  for (double v : c2.values) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_THROW(compliance_from_strain_energy(StrainEnergyField(s), DensityField(GridShape::make3d(1, 2, 1)), 3.0),
               Error);
}

TEST(ComplianceFromStrainEnergy, MatchesHexSolve) {
  fem::Problem p;
  p.grid = fem::StructuredGrid(GridShape::make3d(4, 3, 3));
  p.material.youngs_min = 1e-15;
  for (int k = 0; k <= 3; ++k)
    for (int j = 0; j <= 3; ++j) p.loads.fix_node(p.grid.node_index(0, j, k), 3);
  p.loads.nodal_loads.push_back({p.grid.node_index(4, 1, 2), {0.2, -1.0, 0.5}});
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> ud(0.2, 1.0);
  DensityField rho(p.grid.shape);
  for (auto& v : rho.values) v = ud(rng);
  fem::SolverOptions opt;
  opt.rel_tolerance = 1e-12;
  const auto r = fem::solve(p, rho, opt);
  const StrainEnergyField se(p.grid.shape, fem::strain_energy(r, p.material));
  const auto c = compliance_from_strain_energy(se, rho, p.material.penalty_p);
  for (std::size_t e = 0; e < c.size(); ++e) EXPECT_NEAR(c[e], r.element_compliance[e], 1e-10 * r.element_compliance[e]);
}

TEST(TetIo, RoundTripAndTruncation) {
  auto m = six_tet_cube();
  m.nodal_fields["f"] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  std::stringstream ss;
  write_tet_mesh(ss, m);
  const auto back = read_tet_mesh(ss);
  EXPECT_EQ(back.nodes, m.nodes);
  EXPECT_EQ(back.tets, m.tets);
  EXPECT_EQ(back.nodal_fields, m.nodal_fields);
  std::stringstream bad("# header\nnodes 2\n0 0 0\n1 1\n");
  try {
    read_tet_mesh(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TruncatedFile);
  }
}

TEST(VtkWriter, StructuredPointsLayout) {
  std::stringstream ss;
  io::write_vtk_structured_points(ss, GridShape::make3d(2, 1, 1), {{"rho", {0.25, 0.75}}});
  const auto s = ss.str();
  EXPECT_NE(s.find("DIMENSIONS 3 2 2"), std::string::npos);
  EXPECT_NE(s.find("CELL_DATA 2"), std::string::npos);
  EXPECT_NE(s.find("SCALARS rho double 1\nLOOKUP_TABLE default\n0.25\n0.75\n"), std::string::npos);
}
