// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>
#include <set>
#include <string>

#include "topopt/fem/solver.hpp"
#include "topopt/simp/simp.hpp"

namespace topopt::datagen {

enum class LoadKind { Nodal, Surface, Moment };

inline std::string to_string(LoadKind k) {
  switch (k) {
    case LoadKind::Nodal: return "nodal";
    case LoadKind::Surface: return "surface";
    case LoadKind::Moment: return "moment";
  }
  return "nodal";
}

inline LoadKind load_kind_from_string(const std::string& s) {
  if (s == "nodal") return LoadKind::Nodal;
  if (s == "surface") return LoadKind::Surface;
  if (s == "moment") return LoadKind::Moment;
  throw Error(ErrorKind::InvalidArgument, "unknown load kind '" + s + "'");
}

/// Everything needed to regenerate a dataset bit for bit.
struct GenConfig {
  GridShape shape = GridShape::make2d(64, 64);
  int n_samples = 100;
  double vf_min = 0.3;
  double vf_max = 0.6;
  std::set<LoadKind> load_kinds{LoadKind::Nodal, LoadKind::Surface, LoadKind::Moment};
  std::uint64_t rng_seed = 0;
  double duplicate_tolerance = 0.05;
  double curation_tolerance = 0.01;
  /// Minimum distance (element widths) between a loaded node and any support.
  double exclusion_radius = 4.0;
  double magnitude_min = 0.1;
  double magnitude_max = 10.0;
  int max_draws = 1000;
  /// Upper bound on attempted SIMP runs, as a multiple of n_samples.
  int attempt_factor = 20;
  double train_fraction = 0.75;
  double binarize_threshold = 0.5;
  fem::MaterialModel material;
  simp::SimpParams simp;
  fem::SolverOptions solver;

  static GenConfig defaults2d() { return GenConfig{}; }
  static GenConfig defaults3d() {
    GenConfig c;
    c.shape = GridShape::make3d(32, 32, 32);
    c.exclusion_radius = 3.0;
    return c;
  }

  void validate() const {
    TOPOPT_REQUIRE(shape.dimensionality == 2 || shape.dimensionality == 3, ErrorKind::InvalidArgument,
                   "grid dimensionality must be 2 or 3");
    for (int a = 0; a < shape.dimensionality; ++a)
      TOPOPT_REQUIRE(shape.n[a] >= 2, ErrorKind::InvalidArgument, "grid dims must be >= 2");
    TOPOPT_REQUIRE(n_samples >= 1, ErrorKind::InvalidArgument, "n_samples must be >= 1");
    TOPOPT_REQUIRE(vf_min > 0.0 && vf_max < 1.0 && vf_min <= vf_max, ErrorKind::InvalidArgument,
                   "vf_range must be a sub-interval of (0,1)");
    TOPOPT_REQUIRE(!load_kinds.empty(), ErrorKind::InvalidArgument, "no load kinds enabled");
    TOPOPT_REQUIRE(duplicate_tolerance > 0.0, ErrorKind::InvalidArgument, "duplicate_tolerance must be > 0");
    TOPOPT_REQUIRE(curation_tolerance >= 0.0, ErrorKind::InvalidArgument, "curation_tolerance must be >= 0");
    TOPOPT_REQUIRE(exclusion_radius >= 0.0, ErrorKind::InvalidArgument, "exclusion_radius must be >= 0");
    TOPOPT_REQUIRE(magnitude_min > 0.0 && magnitude_min <= magnitude_max, ErrorKind::InvalidArgument,
                   "bad load magnitude range");
    TOPOPT_REQUIRE(max_draws >= 1 && attempt_factor >= 1, ErrorKind::InvalidArgument, "bad retry limits");
    TOPOPT_REQUIRE(train_fraction > 0.0 && train_fraction < 1.0, ErrorKind::InvalidArgument,
                   "train_fraction must lie in (0,1)");
    material.validate();
    simp::SimpParams p = simp;
    p.target_vf = 0.5 * (vf_min + vf_max);
    p.validate();
  }
};

using nlohmann::json;

inline json to_json(const GenConfig& c) {
  json kinds = json::array();
  for (auto k : c.load_kinds) kinds.push_back(to_string(k));
  std::vector<int> dims(c.shape.n.begin(), c.shape.n.begin() + c.shape.dimensionality);
  return json{
      {"dims", dims},
      {"n_samples", c.n_samples},
      {"vf_range", {c.vf_min, c.vf_max}},
      {"load_kinds", kinds},
      {"seed", c.rng_seed},
      {"duplicate_tolerance", c.duplicate_tolerance},
      {"curation_tolerance", c.curation_tolerance},
      {"exclusion_radius", c.exclusion_radius},
      {"magnitude_range", {c.magnitude_min, c.magnitude_max}},
      {"max_draws", c.max_draws},
      {"attempt_factor", c.attempt_factor},
      {"train_fraction", c.train_fraction},
      {"binarize_threshold", c.binarize_threshold},
      {"material",
       {{"youngs_base", c.material.youngs_base},
        {"youngs_min", c.material.youngs_min},
        {"poisson", c.material.poisson},
        {"penalty_p", c.material.penalty_p}}},
      {"simp",
       {{"filter_radius", c.simp.filter_radius},
        {"move_limit", c.simp.move_limit},
        {"oc_damping", c.simp.oc_damping},
        {"change_threshold", c.simp.change_threshold},
        {"max_iterations", c.simp.max_iterations},
        {"density_floor", c.simp.density_floor},
        {"change_norm", c.simp.change_norm == simp::ChangeNorm::LInf ? "linf" : "l2"}}},
      {"solver",
       {{"kind", c.solver.kind == fem::SolverKind::Auto     ? "auto"
                 : c.solver.kind == fem::SolverKind::Direct ? "direct"
                                                            : "pcg"},
        {"rel_tolerance", c.solver.rel_tolerance}}},
  };
}

/// Reads a config object; absent keys keep the defaults of `base`.
inline GenConfig gen_config_from_json(const json& j, GenConfig base = {}) {
  GenConfig c = base;
  try {
    if (j.contains("dims")) {
      const auto d = j.at("dims").get<std::vector<int>>();
      TOPOPT_REQUIRE(d.size() == 2 || d.size() == 3, ErrorKind::InvalidArgument, "dims must have 2 or 3 entries");
      c.shape = d.size() == 2 ? GridShape::make2d(d[0], d[1]) : GridShape::make3d(d[0], d[1], d[2]);
    }
    auto get = [&](const char* key, auto& dst) {
      if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("n_samples", c.n_samples);
    if (j.contains("vf_range")) {
      c.vf_min = j.at("vf_range").at(0).get<double>();
      c.vf_max = j.at("vf_range").at(1).get<double>();
    }
    if (j.contains("load_kinds")) {
      c.load_kinds.clear();
      for (const auto& k : j.at("load_kinds")) c.load_kinds.insert(load_kind_from_string(k.get<std::string>()));
    }
    get("seed", c.rng_seed);
    get("duplicate_tolerance", c.duplicate_tolerance);
    get("curation_tolerance", c.curation_tolerance);
    get("exclusion_radius", c.exclusion_radius);
    if (j.contains("magnitude_range")) {
      c.magnitude_min = j.at("magnitude_range").at(0).get<double>();
      c.magnitude_max = j.at("magnitude_range").at(1).get<double>();
    }
    get("max_draws", c.max_draws);
    get("attempt_factor", c.attempt_factor);
    get("train_fraction", c.train_fraction);
    get("binarize_threshold", c.binarize_threshold);
    if (j.contains("material")) {
      const auto& m = j.at("material");
      if (m.contains("youngs_base")) c.material.youngs_base = m.at("youngs_base").get<double>();
      if (m.contains("youngs_min")) c.material.youngs_min = m.at("youngs_min").get<double>();
      if (m.contains("poisson")) c.material.poisson = m.at("poisson").get<double>();
      if (m.contains("penalty_p")) c.material.penalty_p = m.at("penalty_p").get<double>();
    }
    if (j.contains("simp")) {
      const auto& s = j.at("simp");
      if (s.contains("filter_radius")) c.simp.filter_radius = s.at("filter_radius").get<double>();
      if (s.contains("move_limit")) c.simp.move_limit = s.at("move_limit").get<double>();
      if (s.contains("oc_damping")) c.simp.oc_damping = s.at("oc_damping").get<double>();
      if (s.contains("change_threshold")) c.simp.change_threshold = s.at("change_threshold").get<double>();
      if (s.contains("max_iterations")) c.simp.max_iterations = s.at("max_iterations").get<int>();
      if (s.contains("density_floor")) c.simp.density_floor = s.at("density_floor").get<double>();
      if (s.contains("change_norm"))
        c.simp.change_norm = s.at("change_norm").get<std::string>() == "l2" ? simp::ChangeNorm::L2 : simp::ChangeNorm::LInf;
    }
    if (j.contains("solver")) {
      const auto& s = j.at("solver");
      if (s.contains("kind")) {
        const auto k = s.at("kind").get<std::string>();
        c.solver.kind = k == "direct" ? fem::SolverKind::Direct : k == "pcg" ? fem::SolverKind::Pcg : fem::SolverKind::Auto;
      }
      if (s.contains("rel_tolerance")) c.solver.rel_tolerance = s.at("rel_tolerance").get<double>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("bad generator config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace topopt::datagen
