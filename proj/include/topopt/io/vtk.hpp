// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "topopt/core/field.hpp"

namespace topopt::io {

/// Legacy ASCII VTK, STRUCTURED_POINTS with cell data. Field order in
/// `fields` must follow shape.index().
inline void write_vtk_structured_points(std::ostream& out, const GridShape& shape,
                                        const std::map<std::string, std::vector<double>>& fields,
                                        std::array<double, 3> origin = {0, 0, 0},
                                        std::array<double, 3> spacing = {1, 1, 1}) {
  for (const auto& [name, f] : fields)
    TOPOPT_REQUIRE(f.size() == shape.size(), ErrorKind::ShapeMismatch, "vtk field '" + name + "' has wrong length");
  out << "# vtk DataFile Version 3.0\n";
  out << "topopt voxel fields\n";
  out << "ASCII\n";
  out << "DATASET STRUCTURED_POINTS\n";
  // Points are the cell corners, hence one more than the cell count.
  out << "DIMENSIONS " << shape.nx() + 1 << ' ' << shape.ny() + 1 << ' ' << shape.nz() + 1 << '\n';
  out.precision(9);
  out << "ORIGIN " << origin[0] << ' ' << origin[1] << ' ' << origin[2] << '\n';
  out << "SPACING " << spacing[0] << ' ' << spacing[1] << ' ' << spacing[2] << '\n';
  out << "CELL_DATA " << shape.size() << '\n';
  for (const auto& [name, f] : fields) {
    out << "SCALARS " << name << " double 1\n";
    out << "LOOKUP_TABLE default\n";
    for (double v : f) out << v << '\n';
  }
}

inline void write_vtk_structured_points(const std::string& path, const GridShape& shape,
                                        const std::map<std::string, std::vector<double>>& fields,
                                        std::array<double, 3> origin = {0, 0, 0},
                                        std::array<double, 3> spacing = {1, 1, 1}) {
  std::ofstream out(path);
  TOPOPT_REQUIRE(out.good(), ErrorKind::IoError, "cannot write " + path);
  write_vtk_structured_points(out, shape, fields, origin, spacing);
  TOPOPT_REQUIRE(out.good(), ErrorKind::IoError, "write failed for " + path);
}

}  // namespace topopt::io
