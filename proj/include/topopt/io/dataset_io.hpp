// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "topopt/datagen/dataset.hpp"
#include "topopt/io/container.hpp"

namespace topopt::io {

namespace detail {

template <class Tag>
std::vector<float> to_f32(const Field<Tag>& f) {
  return std::vector<float>(f.values.begin(), f.values.end());
}

template <class Tag>
std::vector<float> frames_f32(const std::vector<Field<Tag>>& frames) {
  std::vector<float> out;
  for (const auto& f : frames) out.insert(out.end(), f.values.begin(), f.values.end());
  return out;
}

template <class Tag>
std::vector<Field<Tag>> frames_from(const Block& b, const GridShape& shape) {
  const auto v = b.as<float>();
  const std::size_t n = shape.size();
  TOPOPT_REQUIRE(n > 0 && v.size() % n == 0, ErrorKind::CorruptHeader, "block '" + b.name + "' is not a frame stack");
  std::vector<Field<Tag>> out;
  for (std::size_t k = 0; k < v.size() / n; ++k)
    out.emplace_back(shape, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(k * n),
                                                v.begin() + static_cast<std::ptrdiff_t>((k + 1) * n)));
  return out;
}

inline std::vector<std::int64_t> grid_dims(const GridShape& s) {
  if (s.dimensionality == 2) return {s.ny(), s.nx()};
  return {s.nz(), s.ny(), s.nx()};
}

}  // namespace detail

inline fem::Problem problem_from_json(const json& j, const datagen::GenConfig& cfg) {
  fem::Problem p;
  p.grid = fem::StructuredGrid(cfg.shape);
  p.material = cfg.material;
  p.loads.fixed_dofs = j.at("fixed_dofs").get<std::vector<std::size_t>>();
  for (const auto& l : j.at("loads"))
    p.loads.nodal_loads.push_back({l.at("node").get<std::size_t>(), l.at("force").get<std::array<double, 3>>()});
  p.target_vf = j.at("target_vf").get<double>();
  return p;
}

/// Per-sample blocks: c0 [cells], densities [F, cells], compliances [F, cells]
/// (all f32), final_binary [cells] (u8), total_compliance [F] (f64).
inline Container dataset_to_container(const datagen::Dataset& ds) {
  Container c;
  c.kind = "dataset";
  const auto dims = detail::grid_dims(ds.config.shape);
  json samples = json::array();
  for (const auto& r : ds.samples) {
    const std::string pre = "s" + std::to_string(r.id) + ".";
    const auto frames = static_cast<std::int64_t>(r.densities.size());
    samples.push_back({{"id", r.id},
                       {"attempt", r.attempt},
                       {"split", datagen::to_string(r.split)},
                       {"load_kind", datagen::to_string(r.load_kind)},
                       {"problem", datagen::problem_json(r)},
                       {"c0_norm", {{"log_min", r.c0_norm.log_min}, {"log_max", r.c0_norm.log_max}}},
                       {"iteration_count", r.iteration_count},
                       {"frame_iteration", r.frame_iteration}});
    auto with = [&](std::int64_t lead) {
      std::vector<std::int64_t> s{lead};
      s.insert(s.end(), dims.begin(), dims.end());
      return s;
    };
    c.blocks.push_back(Block::of(pre + "c0", dims, detail::to_f32(r.c0)));
    c.blocks.push_back(Block::of(pre + "densities", with(frames), detail::frames_f32(r.densities)));
    c.blocks.push_back(Block::of(pre + "compliances", with(frames), detail::frames_f32(r.compliances)));
    std::vector<std::uint8_t> bin(r.final_binary.values.begin(), r.final_binary.values.end());
    c.blocks.push_back(Block::of(pre + "final_binary", dims, bin));
    c.blocks.push_back(Block::of(pre + "total_compliance", {frames}, r.total_compliance));
  }
  c.meta = json{{"config", datagen::to_json(ds.config)},
                {"grid", dims},
                {"n_samples", ds.samples.size()},
                {"schema", {"c0", "densities", "compliances", "final_binary", "total_compliance"}},
                {"manifest", ds.manifest},
                {"samples", samples}};
  return c;
}

inline datagen::Dataset dataset_from_container(const Container& c) {
  TOPOPT_REQUIRE(c.kind == "dataset", ErrorKind::CorruptHeader, "container holds '" + c.kind + "', not a dataset");
  datagen::Dataset ds;
  try {
    ds.config = datagen::gen_config_from_json(c.meta.at("config"));
    ds.manifest = c.meta.at("manifest");
    for (const auto& js : c.meta.at("samples")) {
      datagen::SampleRecord r;
      r.id = js.at("id").get<int>();
      r.attempt = js.at("attempt").get<std::uint64_t>();
      r.split = js.at("split").get<std::string>() == "train" ? datagen::Split::Train : datagen::Split::Test;
      r.load_kind = datagen::load_kind_from_string(js.at("load_kind").get<std::string>());
      r.problem = problem_from_json(js.at("problem"), ds.config);
      r.fixed_nodes = js.at("problem").at("fixed_nodes").get<std::vector<std::size_t>>();
      r.c0_norm.log_min = js.at("c0_norm").at("log_min").get<double>();
      r.c0_norm.log_max = js.at("c0_norm").at("log_max").get<double>();
      r.iteration_count = js.at("iteration_count").get<int>();
      r.frame_iteration = js.at("frame_iteration").get<std::vector<int>>();
      const std::string pre = "s" + std::to_string(r.id) + ".";
      const auto& shape = ds.config.shape;
      const auto c0 = c.block(pre + "c0").as<float>();
      r.c0 = ComplianceField(shape, std::vector<double>(c0.begin(), c0.end()));
      r.densities = detail::frames_from<DensityTag>(c.block(pre + "densities"), shape);
      r.compliances = detail::frames_from<ComplianceTag>(c.block(pre + "compliances"), shape);
      const auto bin = c.block(pre + "final_binary").as<std::uint8_t>();
      r.final_binary = DensityField(shape, std::vector<double>(bin.begin(), bin.end()));
      r.total_compliance = c.block(pre + "total_compliance").as<double>();
      TOPOPT_REQUIRE(r.densities.size() == r.compliances.size() && r.densities.size() == r.total_compliance.size() &&
                         r.frame_iteration.size() == r.densities.size() && !r.densities.empty(),
                     ErrorKind::CorruptHeader, "sample " + std::to_string(r.id) + " has inconsistent frame counts");
      ds.samples.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CorruptHeader, std::string("dataset metadata: ") + e.what());
  }
  return ds;
}

inline void save_dataset(const std::string& path, const datagen::Dataset& ds) {
  write_container(path, dataset_to_container(ds));
}
inline datagen::Dataset load_dataset(const std::string& path) { return dataset_from_container(read_container(path)); }

}  // namespace topopt::io
