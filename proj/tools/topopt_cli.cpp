// SPDX-License-Identifier: Apache-2.0
// topopt: command-line front end for the header-only library.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "topopt/io/artifacts.hpp"
#include "topopt/io/export.hpp"
#include "topopt/io/vtk.hpp"
#include "topopt/pipelines/pipelines.hpp"
#include "topopt/voxel/tet_io.hpp"

using namespace topopt;
using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  TOPOPT_REQUIRE(in.good(), ErrorKind::IoError, "cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  TOPOPT_REQUIRE(out.good(), ErrorKind::IoError, "cannot write " + path);
  out << text;
  TOPOPT_REQUIRE(out.good(), ErrorKind::IoError, "write failed for " + path);
}

void emit(const json& summary) { std::cout << summary.dump() << std::endl; }

// ------------------------------------------------------------------ solve

struct SolveArgs {
  std::string config, out, vtk;
};

void run_solve(const SolveArgs& a) {
  const json spec = read_json(a.config);
  const auto s = io::solve_spec_from_json(spec);
  const auto trace = simp::run_simp(s.problem, s.simp, s.solver);
  io::write_container(a.out, io::trace_to_container(trace, s.problem.grid.shape, spec));
  if (!a.vtk.empty())
    io::write_vtk_structured_points(a.vtk, s.problem.grid.shape,
                                    {{"density", trace.final_density().values},
                                     {"compliance", trace.compliances.back().values}});
  emit({{"command", "solve"},
        {"iterations", trace.iterations()},
        {"converged", trace.converged},
        {"final_vf", trace.final_density().mean()},
        {"final_compliance", trace.total_compliance.back()}});
}

// ------------------------------------------------------------------ gen2d / gen3d

struct GenArgs {
  std::string config, out, manifest;
  std::optional<std::uint64_t> seed;
  std::optional<int> samples;
  std::vector<int> dims;
  bool quiet = false;
};

void run_gen(const GenArgs& a, int dim) {
  auto cfg = dim == 2 ? datagen::GenConfig::defaults2d() : datagen::GenConfig::defaults3d();
  json j = a.config.empty() ? json::object() : read_json(a.config);
  if (!a.dims.empty()) j["dims"] = a.dims;
  if (a.samples) j["n_samples"] = *a.samples;
  if (a.seed) j["seed"] = *a.seed;
  cfg = datagen::gen_config_from_json(j, cfg);
  TOPOPT_REQUIRE(cfg.shape.dimensionality == dim, ErrorKind::InvalidArgument,
                 "gen" + std::to_string(dim) + "d needs " + std::to_string(dim) + " dims");
  const auto ds = datagen::generate_dataset(cfg, a.quiet ? nullptr : &std::cerr);
  io::save_dataset(a.out, ds);
  if (!a.manifest.empty()) write_text(a.manifest, ds.manifest.dump(2) + "\n");
  emit({{"command", dim == 2 ? "gen2d" : "gen3d"},
        {"samples", ds.samples.size()},
        {"train", ds.split(datagen::Split::Train).size()},
        {"test", ds.split(datagen::Split::Test).size()}});
}

// ------------------------------------------------------------------ voxelize

struct VoxelArgs {
  std::string mesh, out, vtk;
  std::vector<int> res;
};

void run_voxelize(const VoxelArgs& a) {
  std::array<int, 3> r{};
  if (a.res.size() == 1) r = {a.res[0], a.res[0], a.res[0]};
  else if (a.res.size() == 3) r = {a.res[0], a.res[1], a.res[2]};
  else throw Error(ErrorKind::InvalidArgument, "--res takes 1 or 3 values");
  const auto grid = voxel::voxelize(voxel::read_tet_mesh(a.mesh), r);
  io::write_container(a.out, io::voxels_to_container(grid));
  if (!a.vtk.empty()) io::write_vtk_structured_points(a.vtk, grid.shape(), grid.fields, grid.origin, grid.spacing());
  std::size_t inside = 0;
  for (int o : grid.owner) inside += o >= 0;
  emit({{"command", "voxelize"}, {"voxels", grid.size()}, {"inside", inside}});
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string framework, dataset, config, out, history;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  bool quiet = false;
};

void run_train(const TrainArgs& a) {
  const auto fw = pipelines::framework_from_string(a.framework);
  json j = a.config.empty() ? json::object() : read_json(a.config);
  if (a.seed) j["seed"] = *a.seed;
  if (a.epochs) j["epochs"] = *a.epochs;
  const auto cfg = pipelines::train_config_from_json(j);
  const auto ds = io::load_dataset(a.dataset);
  std::function<void(pipelines::Role, const pipelines::EpochRecord&)> log;
  if (!a.quiet)
    log = [](pipelines::Role r, const pipelines::EpochRecord& e) {
      std::cerr << pipelines::to_string(r) << " epoch " << e.epoch << " train " << e.train_loss << " val "
                << e.val_loss << " lr " << e.lr << '\n';
    };
  const auto b = pipelines::train_framework(fw, ds, cfg, log);
  pipelines::save_bundle(a.out, b);
  json hist = json::object();
  for (const auto& [role, h] : b.history) hist[pipelines::to_string(role)] = pipelines::to_json(h);
  if (!a.history.empty()) write_text(a.history, hist.dump(2) + "\n");
  json epochs = json::object();
  for (const auto& [role, h] : b.history) epochs[pipelines::to_string(role)] = h.size();
  emit({{"command", "train"}, {"framework", pipelines::to_string(fw)}, {"epochs", epochs}});
}

// ------------------------------------------------------------------ infer

struct InferArgs {
  std::string bundle, dataset, problem, out;
  std::optional<int> sample, steps;
};

void run_infer(const InferArgs& a) {
  const auto b = pipelines::load_bundle(a.bundle);
  b.check();
  ComplianceField c0;
  double vf = 0;
  if (!a.dataset.empty()) {
    TOPOPT_REQUIRE(a.sample.has_value(), ErrorKind::InvalidArgument, "--dataset needs --sample");
    const auto ds = io::load_dataset(a.dataset);
    const datagen::SampleRecord* rec = nullptr;
    for (const auto& r : ds.samples)
      if (r.id == *a.sample) rec = &r;
    TOPOPT_REQUIRE(rec, ErrorKind::InvalidArgument, "dataset has no sample " + std::to_string(*a.sample));
    c0 = rec->c0;
    vf = rec->target_vf();
  } else {
    TOPOPT_REQUIRE(!a.problem.empty(), ErrorKind::InvalidArgument, "infer needs --dataset or --problem");
    const auto s = io::solve_spec_from_json(read_json(a.problem));
    const auto sol = fem::solve(s.problem, DensityField(s.problem.grid.shape, s.problem.target_vf), s.solver);
    c0 = datagen::normalize_compliance(sol.element_compliance).field;
    vf = s.problem.target_vf;
  }
  const auto& g = c0.shape;
  TOPOPT_REQUIRE(pipelines::spatial_of(g) == b.spec().spatial, ErrorKind::ShapeMismatch, "bundle was trained on another grid size");

  io::Container c;
  c.kind = "prediction";
  c.meta = {{"dims", io::dims_json(g)}, {"framework", pipelines::to_string(b.framework)}, {"target_vf", vf}};
  DensityField final_density;
  switch (b.framework) {
    case pipelines::Framework::DOD: final_density = pipelines::infer_dod(b, c0, vf); break;
    case pipelines::Framework::DS: {
      const auto r = pipelines::infer_ds(b, c0, vf, a.steps.value_or(-1));
      std::vector<const std::vector<double>*> seq;
      for (const auto& d : r.trace) seq.push_back(&d.values);
      c.blocks.push_back(io::stack_block("sequence", g, seq));
      final_density = r.final_density();
      break;
    }
    case pipelines::Framework::CDCS: {
      const auto r = pipelines::infer_cdcs(b, c0, vf);
      std::vector<const std::vector<double>*> seq, comp;
      for (const auto& d : r.densities) seq.push_back(&d.values);
      for (const auto& k : r.compliances) comp.push_back(&k.values);
      c.blocks.push_back(io::stack_block("sequence", g, seq));
      c.blocks.push_back(io::stack_block("compliances", g, comp));
      final_density = r.final_density;
      json calls = json::array();
      for (auto role : r.calls) calls.push_back(pipelines::to_string(role));
      c.meta["calls"] = calls;
      break;
    }
  }
  c.blocks.insert(c.blocks.begin(), io::stack_block("density", g, {&final_density.values}));
  c.meta["vf_pred"] = final_density.mean();
  io::write_container(a.out, c);
  emit({{"command", "infer"}, {"framework", pipelines::to_string(b.framework)}, {"vf_pred", final_density.mean()},
        {"target_vf", vf}});
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string bundle, dataset, split = "test", tc = "fea", cpn_bundle, csv, json_out;
};

void run_eval(const EvalArgs& a) {
  const auto b = pipelines::load_bundle(a.bundle);
  const auto ds = io::load_dataset(a.dataset);
  std::vector<const datagen::SampleRecord*> recs;
  if (a.split == "all") {
    for (const auto& r : ds.samples) recs.push_back(&r);
  } else {
    TOPOPT_REQUIRE(a.split == "test" || a.split == "train", ErrorKind::InvalidArgument, "--split must be test, train or all");
    recs = ds.split(a.split == "test" ? datagen::Split::Test : datagen::Split::Train);
  }
  TOPOPT_REQUIRE(!recs.empty(), ErrorKind::DatasetTooSmall, "no samples in split '" + a.split + "'");

  std::optional<pipelines::TrainedBundle> cpn;
  if (!a.cpn_bundle.empty()) cpn = pipelines::load_bundle(a.cpn_bundle);
  const auto* tc_source = cpn ? &*cpn : &b;
  const auto rep = metrics::evaluate(recs, pipelines::predictor(b), pipelines::tc_evaluator(a.tc, tc_source),
                                     pipelines::to_string(b.framework), a.tc);
  if (!a.csv.empty()) {
    std::ostringstream s;
    metrics::write_csv(s, rep);
    write_text(a.csv, s.str());
  }
  const json report = metrics::to_json(rep);
  if (!a.json_out.empty()) write_text(a.json_out, report.dump(2) + "\n");
  emit({{"command", "eval"},
        {"framework", rep.framework},
        {"samples", rep.samples.size()},
        {"failures", rep.failures},
        {"r_vf", report.at("pearson_r_vf")},
        {"r_tc", report.at("pearson_r_tc")},
        {"vf_mse", rep.vf_mse()},
        {"tc_mse", rep.tc_mse()},
        {"density_mse", rep.density_mse()}});
}

// ------------------------------------------------------------------ export

struct ExportArgs {
  std::string input, pgm, vtk, obj;
  io::ExportSelection sel;
  double iso = 0.5;
};

void run_export(const ExportArgs& a) {
  TOPOPT_REQUIRE(!a.pgm.empty() || !a.vtk.empty() || !a.obj.empty(), ErrorKind::InvalidArgument,
                 "export needs at least one of --pgm, --vtk, --obj");
  const auto rho = io::select_density(io::read_container(a.input), a.sel);
  json out = {{"command", "export"}, {"cells", rho.size()}, {"vf", rho.mean()}};
  if (!a.pgm.empty()) io::write_pgm16(a.pgm, rho);
  if (!a.vtk.empty()) io::write_vtk_structured_points(a.vtk, rho.shape, {{"density", rho.values}});
  if (!a.obj.empty()) {
    const auto mesh = io::marching_cubes(rho, a.iso);
    io::write_obj(a.obj, mesh);
    out["vertices"] = mesh.vertices.size();
    out["triangles"] = mesh.triangles.size();
  }
  emit(out);
}

void report_error(const std::string& kind, std::string message) {
  if (message.rfind(kind + ": ", 0) == 0) message.erase(0, kind.size() + 2);
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topology optimisation: SIMP data generation, network training and inference"};
  app.require_subcommand(1);

  SolveArgs solve;
  auto* s = app.add_subcommand("solve", "Run one SIMP problem and write its trace");
  s->add_option("--config", solve.config, "Problem spec (JSON)")->required();
  s->add_option("--out", solve.out, "Trace container")->required();
  s->add_option("--vtk", solve.vtk, "Also write the final design as legacy VTK");

  GenArgs gen2, gen3;
  auto add_gen = [&](const char* name, GenArgs& g, const char* desc) {
    auto* c = app.add_subcommand(name, desc);
    c->add_option("--config", g.config, "Generator config (JSON)");
    c->add_option("--seed", g.seed, "Override the config seed");
    c->add_option("--samples", g.samples, "Override the sample count");
    c->add_option("--dims", g.dims, "Override the grid dims");
    c->add_option("--out", g.out, "Dataset container")->required();
    c->add_option("--manifest", g.manifest, "Write the manifest as JSON");
    c->add_flag("--quiet", g.quiet, "No progress output");
    return c;
  };
  auto* g2 = add_gen("gen2d", gen2, "Generate a 2D dataset");
  auto* g3 = add_gen("gen3d", gen3, "Generate a 3D dataset");

  VoxelArgs vox;
  auto* v = app.add_subcommand("voxelize", "Resample a tet mesh onto a voxel grid");
  v->add_option("--mesh", vox.mesh, "ASCII tet mesh")->required();
  v->add_option("--res", vox.res, "Resolution: n or nx ny nz")->required();
  v->add_option("--out", vox.out, "Voxel container")->required();
  v->add_option("--vtk", vox.vtk, "Also write legacy VTK");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train the networks of one framework");
  t->add_option("--framework", train.framework, "dod, ds or cdcs")
      ->required()
      ->check(CLI::IsMember({"dod", "ds", "cdcs"}));
  t->add_option("--dataset", train.dataset, "Dataset container")->required();
  t->add_option("--config", train.config, "Training config (JSON)");
  t->add_option("--seed", train.seed, "Override the config seed");
  t->add_option("--epochs", train.epochs, "Override the epoch budget");
  t->add_option("--out", train.out, "Bundle container")->required();
  t->add_option("--history", train.history, "Write per-epoch history as JSON");
  t->add_flag("--quiet", train.quiet, "No progress output");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Predict a design with a trained bundle");
  i->add_option("--bundle", inf.bundle, "Bundle container")->required();
  auto* ids = i->add_option("--dataset", inf.dataset, "Take C0 and vf from a dataset sample");
  i->add_option("--sample", inf.sample, "Sample id")->needs(ids);
  i->add_option("--problem", inf.problem, "Problem spec (JSON)")->excludes(ids);
  i->add_option("--steps", inf.steps, "Sequence steps (ds only)");
  i->add_option("--out", inf.out, "Prediction container")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a bundle on a dataset split");
  e->add_option("--bundle", ev.bundle, "Bundle container")->required();
  e->add_option("--dataset", ev.dataset, "Dataset container")->required();
  e->add_option("--split", ev.split, "test, train or all")->capture_default_str();
  e->add_option("--tc", ev.tc, "Total compliance by fea or cpn")->capture_default_str();
  e->add_option("--cpn-bundle", ev.cpn_bundle, "Bundle whose CPN scores compliance");
  e->add_option("--csv", ev.csv, "Per-sample CSV");
  e->add_option("--json", ev.json_out, "Aggregate report JSON");

  ExportArgs ex;
  auto* x = app.add_subcommand("export", "Write a density as PGM, VTK or OBJ");
  x->add_option("--input", ex.input, "Trace, dataset, voxel or prediction container")->required();
  x->add_option("--sample", ex.sel.sample, "Dataset sample id");
  x->add_option("--frame", ex.sel.frame, "Iterate or sequence index; negative counts from the end");
  x->add_option("--field", ex.sel.field, "Voxel field name")->capture_default_str();
  x->add_option("--iso", ex.iso, "Iso-level for --obj")->capture_default_str();
  x->add_option("--pgm", ex.pgm, "16-bit PGM (2D)");
  x->add_option("--vtk", ex.vtk, "Legacy VTK structured points");
  x->add_option("--obj", ex.obj, "Marching-cubes iso-surface");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    report_error("Usage", err.what());
    return 1;
  }

  try {
    if (*s) run_solve(solve);
    else if (*g2) run_gen(gen2, 2);
    else if (*g3) run_gen(gen3, 3);
    else if (*v) run_voxelize(vox);
    else if (*t) run_train(train);
    else if (*i) run_infer(inf);
    else if (*e) run_eval(ev);
    else if (*x) run_export(ex);
  } catch (const Error& err) {
    report_error(std::string(to_string(err.kind())), err.what());
    return exit_code(err.kind());
  } catch (const std::exception& err) {
    report_error("Internal", err.what());
    return 2;
  }
  return 0;
}
