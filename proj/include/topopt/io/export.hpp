// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "topopt/core/field.hpp"
#include "topopt/io/mc_tables.hpp"

namespace topopt::io {

// ---------------------------------------------------------------- PGM

/// Binary 16-bit PGM (P5, maxval 65535). The first image row is the top of the
/// domain (largest y) so the picture reads the same way as the mesh.
inline void write_pgm16(std::ostream& out, const DensityField& rho) {
  TOPOPT_REQUIRE(rho.shape.dimensionality == 2, ErrorKind::InvalidArgument, "PGM export needs a 2D field");
  const int nx = rho.shape.nx(), ny = rho.shape.ny();
  out << "P5\n" << nx << ' ' << ny << "\n65535\n";
  std::string row(static_cast<std::size_t>(nx) * 2, '\0');
  for (int y = ny - 1; y >= 0; --y) {
    for (int x = 0; x < nx; ++x) {
      const double v = std::clamp(rho.at(x, y), 0.0, 1.0);
      const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
      row[2 * x] = static_cast<char>(q >> 8);  // big-endian per the format
      row[2 * x + 1] = static_cast<char>(q & 0xFF);
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

inline void write_pgm16(const std::string& path, const DensityField& rho) {
  std::ofstream out(path, std::ios::binary);
  TOPOPT_REQUIRE(out.good(), ErrorKind::IoError, "cannot write " + path);
  write_pgm16(out, rho);
  TOPOPT_REQUIRE(out.good(), ErrorKind::IoError, "write failed for " + path);
}

inline DensityField read_pgm16(std::istream& in) {
  std::string magic;
  int nx = 0, ny = 0, maxval = 0;
  in >> magic >> nx >> ny >> maxval;
  TOPOPT_REQUIRE(in.good() && magic == "P5", ErrorKind::CorruptHeader, "not a binary PGM");
  TOPOPT_REQUIRE(nx > 0 && ny > 0 && maxval == 65535, ErrorKind::CorruptHeader, "unsupported PGM header");
  in.get();  // single whitespace byte before the raster
  DensityField rho(GridShape::make2d(nx, ny));
  std::string row(static_cast<std::size_t>(nx) * 2, '\0');
  for (int y = ny - 1; y >= 0; --y) {
    in.read(row.data(), static_cast<std::streamsize>(row.size()));
    TOPOPT_REQUIRE(in.gcount() == static_cast<std::streamsize>(row.size()), ErrorKind::TruncatedFile,
                   "PGM raster is short");
    for (int x = 0; x < nx; ++x) {
      const unsigned hi = static_cast<unsigned char>(row[2 * x]), lo = static_cast<unsigned char>(row[2 * x + 1]);
      rho.at(x, y) = static_cast<double>((hi << 8) | lo) / 65535.0;
    }
  }
  return rho;
}

inline DensityField read_pgm16(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  TOPOPT_REQUIRE(in.good(), ErrorKind::IoError, "cannot read " + path);
  return read_pgm16(in);
}

// ---------------------------------------------------------------- marching cubes

struct TriMesh {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<int, 3>> triangles;  // 0-based

  bool empty() const { return triangles.empty(); }
};

/// Iso-surface of an element field. Samples sit at element centres
/// ((x + 0.5) * h, ...) and the grid is padded with a layer of zeros so solid
/// touching the boundary still gives a closed surface. Vertices are shared
/// between neighbouring cells. A 2D field is treated as one layer thick.
inline TriMesh marching_cubes(const DensityField& rho, double iso = 0.5, double h = 1.0) {
  const int nx = rho.shape.nx(), ny = rho.shape.ny(), nz = rho.shape.nz();
  const int px = nx + 2, py = ny + 2, pz = nz + 2;
  auto pidx = [&](int i, int j, int k) {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(px) * (j + static_cast<std::size_t>(py) * k);
  };
  auto value = [&](int i, int j, int k) {
    if (i < 1 || j < 1 || k < 1 || i > nx || j > ny || k > nz) return 0.0;
    return rho.at(i - 1, j - 1, k - 1);
  };

  static constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                        {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  static constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                       {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

  TriMesh mesh;
  std::map<std::pair<std::size_t, std::size_t>, int> edge_vertex;

  for (int k = 0; k + 1 < pz; ++k)
    for (int j = 0; j + 1 < py; ++j)
      for (int i = 0; i + 1 < px; ++i) {
        double v[8];
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          v[c] = value(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]);
          if (v[c] < iso) cube |= 1 << c;
        }
        if (detail::kMcEdgeTable[cube] == 0) continue;

        int ev[12];
        for (int e = 0; e < 12; ++e) {
          if (!(detail::kMcEdgeTable[cube] & (1 << e))) continue;
          const int a = kEdge[e][0], b = kEdge[e][1];
          const int ai = i + kCorner[a][0], aj = j + kCorner[a][1], ak = k + kCorner[a][2];
          const int bi = i + kCorner[b][0], bj = j + kCorner[b][1], bk = k + kCorner[b][2];
          const std::size_t pa = pidx(ai, aj, ak), pb = pidx(bi, bj, bk);
          const std::pair<std::size_t, std::size_t> key{std::min(pa, pb), std::max(pa, pb)};
          auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) {
            ev[e] = it->second;
            continue;
          }
          const double t = (iso - v[a]) / (v[b] - v[a]);
          std::array<double, 3> p;
          p[0] = (ai + t * (bi - ai) - 0.5) * h;
          p[1] = (aj + t * (bj - aj) - 0.5) * h;
          p[2] = (ak + t * (bk - ak) - 0.5) * h;
          ev[e] = static_cast<int>(mesh.vertices.size());
          mesh.vertices.push_back(p);
          edge_vertex.emplace(key, ev[e]);
        }
        for (int t = 0; detail::kMcTriTable[cube][t] != -1; t += 3) {
          // table order gives normals pointing out of the solid (towards low density)
          mesh.triangles.push_back({ev[detail::kMcTriTable[cube][t]], ev[detail::kMcTriTable[cube][t + 1]],
                                    ev[detail::kMcTriTable[cube][t + 2]]});
        }
      }
  return mesh;
}

/// Plain OBJ: `v x y z` lines then 1-based `f a b c` lines. An empty mesh
/// writes nothing.
inline void write_obj(std::ostream& out, const TriMesh& mesh) {
  if (mesh.empty()) return;
  std::ostringstream s;
  s.precision(9);
  for (const auto& p : mesh.vertices) s << "v " << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
  for (const auto& t : mesh.triangles) s << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  out << s.str();
}

inline void write_obj(const std::string& path, const TriMesh& mesh) {
  std::ofstream out(path);
  TOPOPT_REQUIRE(out.good(), ErrorKind::IoError, "cannot write " + path);
  write_obj(out, mesh);
  TOPOPT_REQUIRE(out.good(), ErrorKind::IoError, "write failed for " + path);
}

}  // namespace topopt::io
