// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "topopt/datagen/dataset.hpp"
#include "topopt/fem/solver.hpp"

namespace topopt::metrics {

using nlohmann::json;

/// Sample Pearson correlation, two-pass mean-centred.
inline double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  TOPOPT_REQUIRE(x.size() == y.size(), ErrorKind::ShapeMismatch, "pearson_r series lengths differ");
  TOPOPT_REQUIRE(x.size() >= 2, ErrorKind::DegenerateSeries, "pearson_r needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  TOPOPT_REQUIRE(sxx > 0.0 && syy > 0.0, ErrorKind::DegenerateSeries, "pearson_r on a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Fraction of elements with (pred >= threshold) == (target >= 0.5).
inline double accuracy(const DensityField& pred, const DensityField& target, double threshold = 0.5) {
  TOPOPT_REQUIRE(pred.shape == target.shape, ErrorKind::ShapeMismatch, "accuracy shape mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += (pred[i] >= threshold) == (target[i] >= 0.5);
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

inline double vf_of(const DensityField& d) { return d.mean(); }

/// Total compliance of `rho` on the sample's problem by a fresh FE solve.
/// Densities are floored at rho_min like the optimiser does.
inline double tc_fea(const fem::Problem& p, DensityField rho, double rho_min = 1e-3,
                     const fem::SolverOptions& opt = {}) {
  for (auto& v : rho.values) v = std::clamp(v, rho_min, 1.0);
  return fem::solve(p, rho, opt).total_compliance;
}

struct DensityErrors {
  double mse = 0.0, mae = 0.0, bce = 0.0;
};

inline DensityErrors density_errors(const DensityField& pred, const DensityField& target) {
  TOPOPT_REQUIRE(pred.shape == target.shape, ErrorKind::ShapeMismatch, "density error shape mismatch");
  DensityErrors e;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    e.mse += d * d;
    e.mae += std::abs(d);
    const double p = std::clamp(pred[i], 1e-7, 1.0 - 1e-7);
    e.bce -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  const double n = static_cast<double>(pred.size());
  e.mse /= n;
  e.mae /= n;
  e.bce /= n;
  return e;
}

struct SampleMetrics {
  int id = 0;
  double vf_pred = 0, vf_true = 0, tc_pred = 0, tc_true = 0;
  double mse = 0, mae = 0, bce = 0, accuracy = 0;
  std::string error;  // non-empty when inference failed for this sample
  bool ok() const { return error.empty(); }
};

struct Stats {
  double mean = 0, median = 0, min = 0, max = 0;
  std::size_t n = 0;
};

inline Stats stats_of(std::vector<double> v) {
  Stats s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  s.min = v.front();
  s.max = v.back();
  const std::size_t m = v.size() / 2;
  s.median = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  return s;
}

struct Histogram {
  double lo = 0, hi = 0;
  std::vector<std::size_t> counts;  // kHistogramBins uniform bins over [lo, hi]
};

inline constexpr int kHistogramBins = 50;

inline Histogram histogram_of(const std::vector<double>& v, int bins = kHistogramBins) {
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  if (v.empty()) return h;
  h.lo = *std::min_element(v.begin(), v.end());
  h.hi = *std::max_element(v.begin(), v.end());
  const double w = (h.hi - h.lo) / bins;
  for (double x : v) {
    int b = w > 0 ? static_cast<int>((x - h.lo) / w) : 0;
    h.counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))]++;
  }
  return h;
}

/// Named per-sample statistics, in CSV column order.
inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"vf_pred", "vf_true", "vf_abs_err", "vf_sq_err", "tc_pred", "tc_true",
                                              "tc_abs_err", "tc_sq_err", "density_mse", "density_mae", "density_bce",
                                              "accuracy"};
  return names;
}

inline std::vector<double> metric_row(const SampleMetrics& s) {
  const double dv = s.vf_pred - s.vf_true, dt = s.tc_pred - s.tc_true;
  return {s.vf_pred, s.vf_true, std::abs(dv), dv * dv, s.tc_pred, s.tc_true, std::abs(dt), dt * dt,
          s.mse, s.mae, s.bce, s.accuracy};
}

struct EvalReport {
  std::string framework;
  std::string tc_mode;  // "fea" or "cpn"
  std::vector<SampleMetrics> samples;
  std::map<std::string, Stats> stats;
  std::map<std::string, Histogram> histograms;
  double r_vf = std::nan(""), r_tc = std::nan("");
  std::size_t failures = 0;

  const Stats& stat(const std::string& name) const {
    auto it = stats.find(name);
    TOPOPT_REQUIRE(it != stats.end(), ErrorKind::InvalidArgument, "no statistic '" + name + "'");
    return it->second;
  }
  double vf_mse() const { return stat("vf_sq_err").mean; }
  double tc_mse() const { return stat("tc_sq_err").mean; }
  double density_mse() const { return stat("density_mse").mean; }
};

/// Recomputes every aggregate from the per-sample records (failed samples excluded).
inline void aggregate(EvalReport& r) {
  const auto& names = metric_names();
  std::vector<std::vector<double>> cols(names.size());
  r.failures = 0;
  for (const auto& s : r.samples) {
    if (!s.ok()) {
      ++r.failures;
      continue;
    }
    const auto row = metric_row(s);
    for (std::size_t k = 0; k < row.size(); ++k) cols[k].push_back(row[k]);
  }
  r.stats.clear();
  r.histograms.clear();
  for (std::size_t k = 0; k < names.size(); ++k) {
    r.stats[names[k]] = stats_of(cols[k]);
    r.histograms[names[k]] = histogram_of(cols[k]);
  }
  auto safe_r = [](const std::vector<double>& a, const std::vector<double>& b) {
    try {
      return pearson_r(a, b);
    } catch (const Error&) {
      return std::nan("");
    }
  };
  r.r_vf = safe_r(cols[0], cols[1]);
  r.r_tc = safe_r(cols[4], cols[5]);
}

/// Predicts a density for one record; may throw.
using DensityPredictor = std::function<DensityField(const datagen::SampleRecord&)>;
/// Total compliance of a predicted density for one record.
using TcEvaluator = std::function<double(const datagen::SampleRecord&, const DensityField&)>;

inline TcEvaluator fea_tc() {
  return [](const datagen::SampleRecord& r, const DensityField& d) { return tc_fea(r.problem, d); };
}

inline EvalReport evaluate(const std::vector<const datagen::SampleRecord*>& records, const DensityPredictor& predict,
                           const TcEvaluator& tc, std::string framework, std::string tc_mode = "fea") {
  EvalReport rep;
  rep.framework = std::move(framework);
  rep.tc_mode = std::move(tc_mode);
  for (const auto* r : records) {
    SampleMetrics m;
    m.id = r->id;
    m.vf_true = vf_of(r->final_density());
    m.tc_true = r->final_total_compliance();
    try {
      const auto pred = predict(*r);
      m.vf_pred = vf_of(pred);
      m.tc_pred = tc(*r, pred);
      const auto e = density_errors(pred, r->final_density());
      m.mse = e.mse;
      m.mae = e.mae;
      m.bce = e.bce;
      m.accuracy = accuracy(pred, r->final_binary);
    } catch (const Error& e) {
      m.error = std::string(topopt::to_string(e.kind()));
    }
    rep.samples.push_back(m);
  }
  aggregate(rep);
  return rep;
}

/// Shortest round-trip text for a double.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  TOPOPT_REQUIRE(res.ec == std::errc(), ErrorKind::InvalidArgument, "bad number '" + s + "'");
  return v;
}

/// CSV columns: id, the metric_names() columns, error.
inline void write_csv(std::ostream& os, const EvalReport& r) {
  os << "id";
  for (const auto& n : metric_names()) os << "," << n;
  os << ",error\n";
  for (const auto& s : r.samples) {
    os << s.id;
    for (double v : metric_row(s)) os << "," << fmt(v);
    os << "," << s.error << "\n";
  }
}

/// Parses write_csv output back into per-sample records.
inline std::vector<SampleMetrics> read_csv(std::istream& is) {
  std::vector<SampleMetrics> out;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == ',') {
        cells.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    TOPOPT_REQUIRE(cells.size() == metric_names().size() + 2, ErrorKind::InvalidArgument, "bad CSV row");
    SampleMetrics s;
    s.id = std::stoi(cells[0]);
    s.vf_pred = parse_double(cells[1]);
    s.vf_true = parse_double(cells[2]);
    s.tc_pred = parse_double(cells[5]);
    s.tc_true = parse_double(cells[6]);
    s.mse = parse_double(cells[9]);
    s.mae = parse_double(cells[10]);
    s.bce = parse_double(cells[11]);
    s.accuracy = parse_double(cells[12]);
    s.error = cells[13];
    out.push_back(s);
  }
  return out;
}

inline json to_json(const EvalReport& r) {
  json stats = json::object(), hist = json::object();
  for (const auto& [k, s] : r.stats)
    stats[k] = {{"mean", s.mean}, {"median", s.median}, {"min", s.min}, {"max", s.max}, {"n", s.n}};
  for (const auto& [k, h] : r.histograms) hist[k] = {{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}};
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return json{{"framework", r.framework}, {"tc_mode", r.tc_mode},   {"n_samples", r.samples.size()},
              {"failures", r.failures},   {"pearson_r_vf", num(r.r_vf)}, {"pearson_r_tc", num(r.r_tc)},
              {"stats", stats},           {"histograms", hist}};
}

}  // namespace topopt::metrics
