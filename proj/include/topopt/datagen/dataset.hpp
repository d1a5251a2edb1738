// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "topopt/datagen/augment.hpp"
#include "topopt/datagen/config.hpp"
#include "topopt/datagen/preprocess.hpp"
#include "topopt/datagen/sampling.hpp"
#include "topopt/simp/simp.hpp"

namespace topopt::datagen {

enum class Split { Train, Test };

inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

/// One accepted optimisation run, reduced to what the networks consume.
struct SampleRecord {
  int id = 0;
  std::uint64_t attempt = 0;  // rng stream index, enough to replay the draw
  Split split = Split::Train;
  LoadKind load_kind = LoadKind::Nodal;
  fem::Problem problem;
  std::vector<std::size_t> fixed_nodes;

  /// C0: element compliance of the uniform start design, normalized.
  ComplianceField c0;
  NormalizationConstants c0_norm;
  /// Curated frames, first = uniform start, last = final design.
  std::vector<DensityField> densities;
  /// Element compliance of each curated frame, normalized with c0_norm.
  std::vector<ComplianceField> compliances;
  std::vector<double> total_compliance;
  std::vector<int> frame_iteration;  // trace index of each curated frame
  DensityField final_binary;
  int iteration_count = 0;

  double target_vf() const { return problem.target_vf; }
  const DensityField& final_density() const { return densities.back(); }
  double final_total_compliance() const { return total_compliance.back(); }
  /// Frame k of the curated sequence, clamped to the last one.
  const DensityField& frame(std::size_t k) const { return densities[std::min(k, densities.size() - 1)]; }
  const ComplianceField& compliance_frame(std::size_t k) const {
    return compliances[std::min(k, compliances.size() - 1)];
  }
};

struct Dataset {
  GenConfig config;
  std::vector<SampleRecord> samples;
  json manifest;

  std::vector<const SampleRecord*> split(Split s) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : samples)
      if (r.split == s) out.push_back(&r);
    return out;
  }
};

/// Rounds every value to the nearest float; stored fields are 32-bit, so
/// in-memory records then survive a container round trip unchanged.
template <class Tag>
Field<Tag> to_float_precision(Field<Tag> f) {
  for (auto& v : f.values) v = static_cast<double>(static_cast<float>(v));
  return f;
}

/// Reduces a full SIMP trace to a stored record.
inline SampleRecord make_record(const SampledProblem& sp, const simp::OptimizationTrace& trace, const GenConfig& cfg) {
  SampleRecord r;
  r.problem = sp.problem;
  r.fixed_nodes = sp.fixed_nodes;
  r.load_kind = sp.kind;
  auto norm = normalize_compliance(trace.compliances.front());
  r.c0 = to_float_precision(std::move(norm.field));
  r.c0_norm = norm.constants;
  for (auto i : curate_indices(trace.densities, cfg.curation_tolerance)) {
    r.densities.push_back(to_float_precision(trace.densities[i]));
    r.compliances.push_back(to_float_precision(apply_normalization(trace.compliances[i], r.c0_norm)));
    r.total_compliance.push_back(trace.total_compliance[i]);
    r.frame_iteration.push_back(static_cast<int>(i));
  }
  r.final_binary = binarize_density(trace.final_density(), cfg.binarize_threshold);
  r.iteration_count = static_cast<int>(trace.iterations());
  return r;
}

/// Deterministic 75/25-style split: a seeded shuffle, first round(f n) go to train.
inline std::vector<Split> assign_splits(std::size_t n, double train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, ~std::uint64_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  std::vector<Split> out(n, Split::Test);
  for (std::size_t k = 0; k < n_train && k < n; ++k) out[order[k]] = Split::Train;
  return out;
}

inline json problem_json(const SampleRecord& r) {
  json loads = json::array();
  for (const auto& l : r.problem.loads.nodal_loads) loads.push_back({{"node", l.node}, {"force", l.force}});
  return json{{"fixed_nodes", r.fixed_nodes},
              {"fixed_dofs", r.problem.loads.fixed_dofs},
              {"loads", loads},
              {"load_kind", to_string(r.load_kind)},
              {"target_vf", r.problem.target_vf}};
}

/// Samples problems, runs SIMP, rejects duplicates and assembles the dataset.
/// Solver or sampling failures skip the attempt and are logged in the manifest.
inline Dataset generate_dataset(const GenConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  std::vector<DensityField> library;
  json skipped = json::array();
  int rejected = 0;
  const std::uint64_t max_attempts = static_cast<std::uint64_t>(cfg.attempt_factor) * cfg.n_samples;

  for (std::uint64_t attempt = 0; static_cast<int>(ds.samples.size()) < cfg.n_samples; ++attempt) {
    if (attempt >= max_attempts)
      throw Error(ErrorKind::SamplingExhausted, "only " + std::to_string(ds.samples.size()) + " of " +
                                                    std::to_string(cfg.n_samples) + " samples after " +
                                                    std::to_string(max_attempts) + " attempts");
    Rng rng = make_stream(cfg.rng_seed, attempt);
    try {
      const auto sp = sample_problem(rng, cfg);
      simp::SimpParams params = cfg.simp;
      params.target_vf = sp.problem.target_vf;
      const auto trace = simp::run_simp(sp.problem, params, cfg.solver);
      if (!accept_unique(trace.final_density(), library, cfg.duplicate_tolerance)) {
        ++rejected;
        if (log) *log << "attempt " << attempt << ": duplicate design rejected\n";
        continue;
      }
      library.push_back(trace.final_density());
      auto rec = make_record(sp, trace, cfg);
      rec.id = static_cast<int>(ds.samples.size());
      rec.attempt = attempt;
      if (log)
        *log << "sample " << rec.id << " (attempt " << attempt << "): " << rec.iteration_count << " iterations, "
             << rec.densities.size() << " curated frames, vf " << rec.target_vf() << "\n";
      ds.samples.push_back(std::move(rec));
    } catch (const Error& e) {
      skipped.push_back({{"attempt", attempt}, {"error", std::string(topopt::to_string(e.kind()))}, {"message", e.what()}});
      if (log) *log << "attempt " << attempt << " skipped: " << e.what() << "\n";
    }
  }

  const auto splits = assign_splits(ds.samples.size(), cfg.train_fraction, cfg.rng_seed);
  json entries = json::array();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    auto& r = ds.samples[i];
    r.split = splits[i];
    entries.push_back({{"id", r.id},
                       {"attempt", r.attempt},
                       {"split", to_string(r.split)},
                       {"iterations", r.iteration_count},
                       {"frames", r.densities.size()},
                       {"final_total_compliance", r.final_total_compliance()},
                       {"problem", problem_json(r)}});
  }
  ds.manifest = json{{"seed", cfg.rng_seed},
                     {"config", to_json(cfg)},
                     {"n_samples", ds.samples.size()},
                     {"n_train", std::count(splits.begin(), splits.end(), Split::Train)},
                     {"n_test", std::count(splits.begin(), splits.end(), Split::Test)},
                     {"duplicates_rejected", rejected},
                     {"skipped", skipped},
                     {"samples", entries}};
  return ds;
}

}  // namespace topopt::datagen
