// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <istream>
#include <sstream>
#include <string>

#include "topopt/voxel/voxelize.hpp"

namespace topopt::voxel {

// Plain-text tet mesh:
//
//   # comment lines start with '#'
//   nodes <N>
//   x y z            (N lines)
//   tets <M>
//   a b c d          (M lines, 0-based node ids)
//   field <name>
//   v                (N values, any whitespace)
//   ... more field blocks
inline TetMesh read_tet_mesh(std::istream& in) {
  std::stringstream clean;
  for (std::string line; std::getline(in, line);) {
    const auto hash = line.find('#');
    clean << (hash == std::string::npos ? line : line.substr(0, hash)) << '\n';
  }
  TetMesh m;
  std::string key;
  auto fail = [](const std::string& what) { throw Error(ErrorKind::CorruptHeader, "tet mesh: " + what); };
  while (clean >> key) {
    if (key == "nodes") {
      std::size_t n = 0;
      if (!(clean >> n)) fail("missing node count");
      m.nodes.resize(n);
      for (auto& p : m.nodes)
        if (!(clean >> p[0] >> p[1] >> p[2])) throw Error(ErrorKind::TruncatedFile, "tet mesh: node list ends early");
    } else if (key == "tets") {
      std::size_t n = 0;
      if (!(clean >> n)) fail("missing tet count");
      m.tets.resize(n);
      for (auto& t : m.tets)
        if (!(clean >> t[0] >> t[1] >> t[2] >> t[3])) throw Error(ErrorKind::TruncatedFile, "tet mesh: tet list ends early");
    } else if (key == "field") {
      std::string name;
      if (!(clean >> name)) fail("field without a name");
      auto& f = m.nodal_fields[name];
      f.resize(m.nodes.size());
      for (auto& v : f)
        if (!(clean >> v)) throw Error(ErrorKind::TruncatedFile, "tet mesh: field '" + name + "' ends early");
    } else {
      fail("unexpected token '" + key + "'");
    }
  }
  m.validate();
  return m;
}

inline TetMesh read_tet_mesh(const std::string& path) {
  std::ifstream in(path);
  TOPOPT_REQUIRE(in.good(), ErrorKind::IoError, "cannot open " + path);
  return read_tet_mesh(in);
}

inline void write_tet_mesh(std::ostream& out, const TetMesh& m) {
  out.precision(17);
  out << "nodes " << m.nodes.size() << '\n';
  for (const auto& p : m.nodes) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
  out << "tets " << m.tets.size() << '\n';
  for (const auto& t : m.tets) out << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
  for (const auto& [name, f] : m.nodal_fields) {
    out << "field " << name << '\n';
    for (double v : f) out << v << '\n';
  }
}

}  // namespace topopt::voxel
