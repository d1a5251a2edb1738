// SPDX-License-Identifier: Apache-2.0
//
// Single-problem specs, SIMP traces, voxel grids and prediction files, all
// stored in the same block container as datasets.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "topopt/io/dataset_io.hpp"
#include "topopt/voxel/voxelize.hpp"

namespace topopt::io {

/// One SIMP problem read from JSON:
///   dims, target_vf, material/simp/solver (as in the generator config),
///   supports: [{"face": "x-"} | {"node": [i,j(,k)]}, optional "components"],
///   loads: [{"node": [i,j(,k)], "force": [fx,fy(,fz)]}]
struct SolveSpec {
  fem::Problem problem;
  simp::SimpParams simp;
  fem::SolverOptions solver;
};

namespace detail {

inline std::vector<int> components_of(const json& s, int dim) {
  if (!s.contains("components")) {
    std::vector<int> all(static_cast<std::size_t>(dim));
    for (int c = 0; c < dim; ++c) all[c] = c;
    return all;
  }
  auto comps = s.at("components").get<std::vector<int>>();
  for (int c : comps) TOPOPT_REQUIRE(c >= 0 && c < dim, ErrorKind::InvalidArgument, "support component out of range");
  return comps;
}

inline std::size_t lattice_node(const fem::StructuredGrid& g, const json& node) {
  const auto p = node.get<std::vector<int>>();
  TOPOPT_REQUIRE(static_cast<int>(p.size()) == g.dim(), ErrorKind::InvalidArgument, "node coordinate has wrong rank");
  const int lim[3] = {g.nodes_x(), g.nodes_y(), g.nodes_z()};
  for (int a = 0; a < g.dim(); ++a)
    TOPOPT_REQUIRE(p[a] >= 0 && p[a] < lim[a], ErrorKind::InvalidArgument, "node coordinate outside the grid");
  return g.node_index(p[0], p[1], g.dim() == 3 ? p[2] : 0);
}

}  // namespace detail

inline SolveSpec solve_spec_from_json(const json& j) {
  SolveSpec s;
  try {
    json base = json::object();
    for (const char* key : {"dims", "material", "simp", "solver"})
      if (j.contains(key)) base[key] = j.at(key);
    TOPOPT_REQUIRE(base.contains("dims"), ErrorKind::InvalidArgument, "problem spec needs 'dims'");
    const auto cfg = datagen::gen_config_from_json(base);
    const fem::StructuredGrid grid(cfg.shape);
    s.problem.grid = grid;
    s.problem.material = cfg.material;
    s.problem.target_vf = j.at("target_vf").get<double>();
    s.simp = cfg.simp;
    s.simp.target_vf = s.problem.target_vf;
    s.solver = cfg.solver;

    const int dim = grid.dim();
    for (const auto& sup : j.at("supports")) {
      const auto comps = detail::components_of(sup, dim);
      std::vector<std::size_t> nodes;
      if (sup.contains("face")) {
        const auto f = sup.at("face").get<std::string>();
        TOPOPT_REQUIRE(f.size() == 2 && (f[1] == '-' || f[1] == '+') && f[0] >= 'x' && f[0] - 'x' < dim,
                       ErrorKind::InvalidArgument, "face must be one of x-, x+, y-, y+, z-, z+");
        const int axis = f[0] - 'x';
        const int lim[3] = {grid.nodes_x(), grid.nodes_y(), grid.nodes_z()};
        for (std::size_t n = 0; n < grid.node_count(); ++n) {
          const auto c = grid.node_coords(n);
          if (c[axis] == (f[1] == '-' ? 0 : lim[axis] - 1)) nodes.push_back(n);
        }
      } else {
        nodes.push_back(detail::lattice_node(grid, sup.at("node")));
      }
      for (auto n : nodes)
        for (int c : comps) s.problem.loads.fixed_dofs.push_back(n * dim + c);
    }
    s.problem.loads.normalize();
    for (const auto& l : j.at("loads")) {
      fem::NodalLoad nl;
      nl.node = detail::lattice_node(grid, l.at("node"));
      const auto f = l.at("force").get<std::vector<double>>();
      TOPOPT_REQUIRE(static_cast<int>(f.size()) == dim, ErrorKind::InvalidArgument, "force has wrong rank");
      for (int c = 0; c < dim; ++c) nl.force[c] = f[c];
      s.problem.loads.nodal_loads.push_back(nl);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("bad problem spec: ") + e.what());
  }
  s.problem.loads.validate(s.problem.grid);
  s.simp.validate();
  return s;
}

// ---------------------------------------------------------------- stacked fields

/// Block of shape [F, grid dims...] holding F fields, as f64.
inline Block stack_block(const std::string& name, const GridShape& g, const std::vector<const std::vector<double>*>& fs) {
  std::vector<std::int64_t> shape{static_cast<std::int64_t>(fs.size())};
  for (auto d : detail::grid_dims(g)) shape.push_back(d);
  std::vector<double> flat;
  flat.reserve(fs.size() * g.size());
  for (const auto* f : fs) {
    TOPOPT_REQUIRE(f->size() == g.size(), ErrorKind::ShapeMismatch, "field length does not match the grid");
    flat.insert(flat.end(), f->begin(), f->end());
  }
  return Block::of<double>(name, std::move(shape), flat);
}

template <class Tag>
std::vector<Field<Tag>> unstack_block(const Block& b, const GridShape& g) {
  const auto flat = b.as<double>();
  TOPOPT_REQUIRE(!b.shape.empty() && flat.size() == static_cast<std::size_t>(b.shape[0]) * g.size(),
                 ErrorKind::ShapeMismatch, "block '" + b.name + "' does not match the grid");
  std::vector<Field<Tag>> out;
  for (std::int64_t f = 0; f < b.shape[0]; ++f) {
    const auto first = flat.begin() + static_cast<std::ptrdiff_t>(f * g.size());
    out.emplace_back(g, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(g.size())));
  }
  return out;
}

inline json dims_json(const GridShape& g) {
  return std::vector<int>(g.n.begin(), g.n.begin() + g.dimensionality);
}

inline GridShape shape_from_json(const json& d) {
  const auto v = d.get<std::vector<int>>();
  TOPOPT_REQUIRE(v.size() == 2 || v.size() == 3, ErrorKind::CorruptHeader, "dims must have 2 or 3 entries");
  return v.size() == 2 ? GridShape::make2d(v[0], v[1]) : GridShape::make3d(v[0], v[1], v[2]);
}

// ---------------------------------------------------------------- traces

inline Container trace_to_container(const simp::OptimizationTrace& t, const GridShape& g, const json& spec = {}) {
  TOPOPT_REQUIRE(t.size() > 0, ErrorKind::InvalidArgument, "empty trace");
  Container c;
  c.kind = "trace";
  std::vector<const std::vector<double>*> d, k;
  for (const auto& f : t.densities) d.push_back(&f.values);
  for (const auto& f : t.compliances) k.push_back(&f.values);
  c.blocks.push_back(stack_block("densities", g, d));
  c.blocks.push_back(stack_block("compliances", g, k));
  const auto n = static_cast<std::int64_t>(t.size());
  c.blocks.push_back(Block::of<double>("total_compliance", {n}, t.total_compliance));
  c.blocks.push_back(Block::of<double>("change", {n}, t.change));
  c.meta = {{"dims", dims_json(g)},
            {"iterations", t.iterations()},
            {"converged", t.converged},
            {"final_vf", t.final_density().mean()},
            {"final_compliance", t.total_compliance.back()}};
  if (!spec.is_null()) c.meta["spec"] = spec;
  return c;
}

inline simp::OptimizationTrace trace_from_container(const Container& c) {
  TOPOPT_REQUIRE(c.kind == "trace", ErrorKind::CorruptHeader, "container kind is '" + c.kind + "', expected 'trace'");
  simp::OptimizationTrace t;
  try {
    const auto g = shape_from_json(c.meta.at("dims"));
    t.densities = unstack_block<DensityTag>(c.block("densities"), g);
    t.compliances = unstack_block<ComplianceTag>(c.block("compliances"), g);
    t.total_compliance = c.block("total_compliance").as<double>();
    t.change = c.block("change").as<double>();
    t.converged = c.meta.at("converged").get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CorruptHeader, std::string("bad trace header: ") + e.what());
  }
  return t;
}

// ---------------------------------------------------------------- voxel grids

inline Container voxels_to_container(const voxel::VoxelGrid& v) {
  Container c;
  c.kind = "voxels";
  const auto dims = detail::grid_dims(v.shape());
  json names = json::array();
  for (const auto& [name, f] : v.fields) {
    c.blocks.push_back(Block::of<double>("field/" + name, dims, f));
    names.push_back(name);
  }
  c.blocks.push_back(Block::of<std::int32_t>("owner", dims, std::vector<std::int32_t>(v.owner.begin(), v.owner.end())));
  c.meta = {{"dims", dims_json(v.shape())}, {"origin", v.origin}, {"extent", v.extent}, {"fields", names}};
  return c;
}

inline voxel::VoxelGrid voxels_from_container(const Container& c) {
  TOPOPT_REQUIRE(c.kind == "voxels", ErrorKind::CorruptHeader, "container kind is '" + c.kind + "', expected 'voxels'");
  voxel::VoxelGrid v;
  try {
    const auto g = shape_from_json(c.meta.at("dims"));
    TOPOPT_REQUIRE(g.dimensionality == 3, ErrorKind::CorruptHeader, "voxel grid must be 3D");
    v.resolution = g.n;
    v.origin = c.meta.at("origin").get<voxel::Vec3>();
    v.extent = c.meta.at("extent").get<voxel::Vec3>();
    for (const auto& n : c.meta.at("fields")) {
      const auto name = n.get<std::string>();
      v.fields[name] = c.block("field/" + name).as<double>();
      TOPOPT_REQUIRE(v.fields[name].size() == g.size(), ErrorKind::ShapeMismatch, "voxel field has wrong length");
    }
    const auto owner = c.block("owner").as<std::int32_t>();
    v.owner.assign(owner.begin(), owner.end());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CorruptHeader, std::string("bad voxel header: ") + e.what());
  }
  return v;
}

// ---------------------------------------------------------------- export source

struct ExportSelection {
  std::optional<int> sample;  // dataset id
  std::optional<int> frame;   // trace/sequence index, negative counts from the end
  std::string field = "density";
};

/// Picks one density field out of any container this library writes:
/// trace (final or chosen iterate), dataset (a sample's final or chosen
/// frame), voxels (named field), prediction (final or chosen step).
inline DensityField select_density(const Container& c, const ExportSelection& sel) {
  auto pick = [&](const auto& list) -> const auto& {
    TOPOPT_REQUIRE(!list.empty(), ErrorKind::InvalidArgument, "nothing to export");
    const auto n = static_cast<int>(list.size());
    int i = sel.frame.value_or(-1);
    if (i < 0) i += n;
    TOPOPT_REQUIRE(i >= 0 && i < n, ErrorKind::InvalidArgument, "frame index out of range");
    return list[static_cast<std::size_t>(i)];
  };
  if (c.kind == "trace") return pick(trace_from_container(c).densities);
  if (c.kind == "dataset") {
    const auto ds = dataset_from_container(c);
    TOPOPT_REQUIRE(sel.sample.has_value(), ErrorKind::InvalidArgument, "dataset export needs a sample id");
    for (const auto& r : ds.samples)
      if (r.id == *sel.sample) return pick(r.densities);
    throw Error(ErrorKind::InvalidArgument, "dataset has no sample " + std::to_string(*sel.sample));
  }
  if (c.kind == "voxels") {
    const auto v = voxels_from_container(c);
    return v.field<DensityTag>(sel.field);
  }
  if (c.kind == "prediction") {
    const auto g = shape_from_json(c.meta.at("dims"));
    if (sel.frame) return pick(unstack_block<DensityTag>(c.block("sequence"), g));
    return unstack_block<DensityTag>(c.block("density"), g).front();
  }
  throw Error(ErrorKind::InvalidArgument, "cannot export from a '" + c.kind + "' container");
}

}  // namespace topopt::io
