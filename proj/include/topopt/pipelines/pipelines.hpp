// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "topopt/datagen/augment.hpp"
#include "topopt/datagen/dataset.hpp"
#include "topopt/io/container.hpp"
#include "topopt/metrics/metrics.hpp"
#include "topopt/nn/arch.hpp"
#include "topopt/nn/losses.hpp"

namespace topopt::pipelines {

using nlohmann::json;
using FT = nn::Tensor<float>;
using datagen::SampleRecord;

enum class Framework { DOD, DS, CDCS };
enum class Role { DOD, IDPN, DTN, DPN, CPN, FDPN };

inline std::string to_string(Framework f) {
  switch (f) {
    case Framework::DOD: return "dod";
    case Framework::DS: return "ds";
    case Framework::CDCS: return "cdcs";
  }
  return "?";
}

inline Framework framework_from_string(const std::string& s) {
  for (auto f : {Framework::DOD, Framework::DS, Framework::CDCS})
    if (to_string(f) == s) return f;
  throw Error(ErrorKind::InvalidArgument, "unknown framework '" + s + "'");
}

inline std::string to_string(Role r) {
  switch (r) {
    case Role::DOD: return "dod";
    case Role::IDPN: return "idpn";
    case Role::DTN: return "dtn";
    case Role::DPN: return "dpn";
    case Role::CPN: return "cpn";
    case Role::FDPN: return "fdpn";
  }
  return "?";
}

inline Role role_from_string(const std::string& s) {
  for (auto r : {Role::DOD, Role::IDPN, Role::DTN, Role::DPN, Role::CPN, Role::FDPN})
    if (to_string(r) == s) return r;
  throw Error(ErrorKind::InvalidArgument, "unknown network role '" + s + "'");
}

inline std::vector<Role> roles_of(Framework f) {
  switch (f) {
    case Framework::DOD: return {Role::DOD};
    case Framework::DS: return {Role::IDPN, Role::DTN};
    case Framework::CDCS: return {Role::CPN, Role::DPN, Role::FDPN};
  }
  return {};
}

/// Coupled DPN/CPN rounds before the final FDPN call.
inline constexpr int kCdcsSteps = 5;

struct TrainConfig {
  int epochs = 200;
  int batch_size = 8;
  double lr = 1e-3;
  double lr_decay = 0.5;
  int lr_patience = 10;
  double lr_floor = 1e-5;
  int patience = 30;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  int pairs_per_sample = 2;  // DPN/CPN pairs drawn per sample per epoch
  bool augment = true;
  double vf_weight = 1.0;   // IDPN and DTN
  double bce_weight = 1.0;  // DTN
  // architecture knobs shared by every role
  int base_channels = 16;
  int depth = 3;
  int se_reduction = 4;
  int res_blocks = 2;
  int lstm_hidden = 128;
  int unroll_len = 10;

  void validate() const {
    TOPOPT_REQUIRE(batch_size >= 2, ErrorKind::InvalidArgument, "batch_size must be >= 2 for batch normalization");
    TOPOPT_REQUIRE(patience >= 1 && lr_patience >= 1, ErrorKind::InvalidArgument, "patience must be >= 1");
    TOPOPT_REQUIRE(epochs >= 1, ErrorKind::InvalidArgument, "epochs must be >= 1");
    TOPOPT_REQUIRE(lr > 0.0 && lr_floor > 0.0 && lr_decay > 0.0 && lr_decay <= 1.0, ErrorKind::InvalidArgument,
                   "bad learning-rate schedule");
    TOPOPT_REQUIRE(val_fraction > 0.0 && val_fraction < 1.0, ErrorKind::InvalidArgument, "val_fraction must lie in (0,1)");
    TOPOPT_REQUIRE(pairs_per_sample >= 1 && unroll_len >= 1, ErrorKind::InvalidArgument, "bad sequence settings");
  }
};

inline json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"lr_decay", c.lr_decay},
              {"lr_patience", c.lr_patience},
              {"lr_floor", c.lr_floor},
              {"patience", c.patience},
              {"seed", c.seed},
              {"val_fraction", c.val_fraction},
              {"pairs_per_sample", c.pairs_per_sample},
              {"augment", c.augment},
              {"vf_weight", c.vf_weight},
              {"bce_weight", c.bce_weight},
              {"base_channels", c.base_channels},
              {"depth", c.depth},
              {"se_reduction", c.se_reduction},
              {"res_blocks", c.res_blocks},
              {"lstm_hidden", c.lstm_hidden},
              {"unroll_len", c.unroll_len}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  auto get = [&](const char* k, auto& v) {
    if (j.contains(k)) j.at(k).get_to(v);
  };
  try {
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("lr", c.lr);
    get("lr_decay", c.lr_decay);
    get("lr_patience", c.lr_patience);
    get("lr_floor", c.lr_floor);
    get("patience", c.patience);
    get("seed", c.seed);
    get("val_fraction", c.val_fraction);
    get("pairs_per_sample", c.pairs_per_sample);
    get("augment", c.augment);
    get("vf_weight", c.vf_weight);
    get("bce_weight", c.bce_weight);
    get("base_channels", c.base_channels);
    get("depth", c.depth);
    get("se_reduction", c.se_reduction);
    get("res_blocks", c.res_blocks);
    get("lstm_hidden", c.lstm_hidden);
    get("unroll_len", c.unroll_len);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

inline std::vector<int> spatial_of(const GridShape& g) {
  if (g.dimensionality == 2) return {g.ny(), g.nx()};
  return {g.nz(), g.ny(), g.nx()};
}

inline nn::ArchSpec arch_for(Role role, const GridShape& grid, const TrainConfig& c) {
  nn::ArchSpec a;
  switch (role) {
    case Role::DOD:
    case Role::IDPN:
    case Role::FDPN: a.kind = nn::ArchKind::UNet; break;
    case Role::CPN: a.kind = nn::ArchKind::EncoderDecoder; break;
    case Role::DPN: a.kind = nn::ArchKind::USEResNet; break;
    case Role::DTN: a.kind = nn::ArchKind::CnnLstm; break;
  }
  a.dims = grid.dimensionality;
  a.spatial = spatial_of(grid);
  a.input_channels = role == Role::FDPN ? 1 : 2;
  a.base_channels = c.base_channels;
  a.depth = c.depth;
  a.se_reduction = c.se_reduction;
  a.res_blocks = c.res_blocks;
  a.lstm_hidden = c.lstm_hidden;
  a.unroll_len = c.unroll_len;
  a.seed = c.seed * 1000003ull + static_cast<std::uint64_t>(role) + 1;
  return a;
}

// ---------------------------------------------------------------- tensors

/// Stacks same-shaped fields as channels of a single-item batch.
inline FT pack(const std::vector<const std::vector<double>*>& channels, const GridShape& g) {
  nn::Shape s{1, static_cast<int>(channels.size())};
  for (int d : spatial_of(g)) s.push_back(d);
  FT t(s);
  const std::size_t n = g.size();
  for (std::size_t c = 0; c < channels.size(); ++c) {
    TOPOPT_REQUIRE(channels[c]->size() == n, ErrorKind::ShapeMismatch, "channel size does not match the grid");
    std::transform(channels[c]->begin(), channels[c]->end(), t.data.begin() + static_cast<std::ptrdiff_t>(c * n),
                   [](double v) { return static_cast<float>(v); });
  }
  return t;
}

template <class Tag>
Field<Tag> unpack(const FT& t, const GridShape& g, int item = 0) {
  TOPOPT_REQUIRE(t.item_size() == g.size(), ErrorKind::ShapeMismatch, "network output does not match the grid");
  const auto first = t.data.begin() + static_cast<std::ptrdiff_t>(t.item_size() * static_cast<std::size_t>(item));
  return Field<Tag>(g, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(t.item_size())));
}

/// Curated frames resampled to len + 2 entries: index round(j (n-1) / (len+1)).
/// First entry is the uniform start, last is the final design.
inline std::vector<const DensityField*> ds_sequence(const SampleRecord& r, int len) {
  const std::size_t n = r.densities.size();
  std::vector<const DensityField*> out;
  for (int j = 0; j < len + 2; ++j) {
    const auto k = static_cast<std::size_t>(std::lround(static_cast<double>(j) * static_cast<double>(n - 1) / (len + 1)));
    out.push_back(&r.densities[k]);
  }
  return out;
}

/// Number of (D_i, D_{i+1}) pairs seen by DPN/CPN: i in [0, pair_count).
inline int pair_count(const SampleRecord& r) {
  return std::max(1, std::min<int>(kCdcsSteps, static_cast<int>(r.densities.size()) - 1));
}

/// A training example: one input/target per step (one step except DTN).
struct Example {
  std::vector<FT> xs, ys;
};

/// Builds the (input, target) wiring of `role` for one record. `pair` picks
/// the DPN/CPN transition; `op` is a symmetry op id or -1.
inline Example make_example(Role role, const SampleRecord& r, int pair, int op, const TrainConfig& cfg) {
  const GridShape& g = r.c0.shape;
  auto tf = [op](const auto& f) { return op < 0 ? f : datagen::transform_field(f, op); };
  const DensityField vf(g, r.target_vf());
  const auto c0 = tf(r.c0);
  Example e;
  auto add = [&](std::vector<const std::vector<double>*> in, const std::vector<double>& target) {
    e.xs.push_back(pack(in, g));
    e.ys.push_back(pack({&target}, g));
  };
  switch (role) {
    case Role::DOD: {
      const auto y = tf(r.final_density());
      add({&c0.values, &vf.values}, y.values);
      break;
    }
    case Role::IDPN: {
      const auto y = tf(*ds_sequence(r, cfg.unroll_len)[1]);
      add({&c0.values, &vf.values}, y.values);
      break;
    }
    case Role::FDPN: {
      const auto x = tf(r.frame(kCdcsSteps));
      const auto y = tf(r.final_density());
      add({&x.values}, y.values);
      break;
    }
    case Role::DPN: {
      const auto d = tf(r.frame(pair));
      const auto c = tf(r.compliance_frame(pair));
      const auto y = tf(r.frame(pair + 1));
      add({&d.values, &c.values}, y.values);
      break;
    }
    case Role::CPN: {
      const auto d = tf(r.frame(pair + 1));
      const auto y = tf(r.compliance_frame(pair + 1));
      add({&d.values, &c0.values}, y.values);
      break;
    }
    case Role::DTN: {
      const auto seq = ds_sequence(r, cfg.unroll_len);
      std::vector<DensityField> f;
      for (const auto* p : seq) f.push_back(tf(*p));
      for (int t = 1; t <= cfg.unroll_len; ++t) add({&f[t - 1].values, &f[t].values}, f[t + 1].values);
      break;
    }
  }
  return e;
}

inline bool is_pair_role(Role r) { return r == Role::DPN || r == Role::CPN; }

/// Validation examples: unaugmented, up to 4 evenly spaced pairs per sample.
inline std::vector<Example> validation_examples(Role role, const std::vector<const SampleRecord*>& recs,
                                                const TrainConfig& cfg) {
  std::vector<Example> out;
  for (const auto* r : recs) {
    if (!is_pair_role(role)) {
      out.push_back(make_example(role, *r, 0, -1, cfg));
      continue;
    }
    const int m = pair_count(*r);
    const int take = std::min(m, 4);
    for (int j = 0; j < take; ++j) {
      const int i = take == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(j) * (m - 1) / (take - 1)));
      out.push_back(make_example(role, *r, i, -1, cfg));
    }
  }
  return out;
}

/// Loss stack of each role. DTN adds BCE to the IDPN stack.
template <class T>
nn::LossResult<T> role_loss(Role role, const nn::Tensor<T>& pred, const nn::Tensor<T>& target, const TrainConfig& cfg) {
  nn::LossResult<T> l;
  switch (role) {
    case Role::DOD:
    case Role::DPN:
    case Role::FDPN: return nn::bce(pred, target);
    case Role::CPN: return nn::mae(pred, target);
    case Role::IDPN:
      nn::accumulate(l, nn::mse(pred, target));
      nn::accumulate(l, nn::vf_mse(pred, target), cfg.vf_weight);
      return l;
    case Role::DTN:
      nn::accumulate(l, nn::mse(pred, target));
      nn::accumulate(l, nn::vf_mse(pred, target), cfg.vf_weight);
      nn::accumulate(l, nn::bce(pred, target), cfg.bce_weight);
      return l;
  }
  return l;
}

// ---------------------------------------------------------------- schedule

/// Stops after `patience` epochs without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {
    TOPOPT_REQUIRE(patience >= 1, ErrorKind::InvalidArgument, "patience must be >= 1");
  }
  /// Returns true when `val` is a new best.
  bool update(int epoch, double val) {
    if (val < best_) {
      best_ = val;
      best_epoch_ = epoch;
      bad_ = 0;
      return true;
    }
    ++bad_;
    return false;
  }
  bool should_stop() const { return bad_ >= patience_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  int patience_;
  int bad_ = 0;
  int best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Multiplies the rate by `factor` after `patience` epochs without improvement.
class LrSchedule {
 public:
  LrSchedule(double lr, double factor, int patience, double floor)
      : lr_(lr), factor_(factor), floor_(floor), patience_(patience) {}
  double lr() const { return lr_; }
  double update(double val) {
    if (val < best_) {
      best_ = val;
      bad_ = 0;
    } else if (++bad_ >= patience_) {
      lr_ = std::max(floor_, lr_ * factor_);
      bad_ = 0;
    }
    return lr_;
  }

 private:
  double lr_, factor_, floor_;
  int patience_;
  int bad_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0, val_loss = 0.0, lr = 0.0;
};
using History = std::vector<EpochRecord>;

inline json to_json(const History& h) {
  json a = json::array();
  for (const auto& e : h) a.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"lr", e.lr}});
  return a;
}

inline History history_from_json(const json& j) {
  History h;
  for (const auto& e : j)
    h.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("val_loss").get<double>(),
                 e.at("lr").get<double>()});
  return h;
}

/// The epoch loop without any model: callers supply training, validation and
/// snapshot handling. The best-validation snapshot is restored on exit.
struct FitHooks {
  std::function<double(int epoch, double lr)> train_epoch;
  std::function<double()> validate;
  std::function<void()> save_best;
  std::function<void()> restore_best;
  std::function<void(const EpochRecord&)> on_epoch;
};

inline History fit(const TrainConfig& cfg, const FitHooks& hooks) {
  EarlyStopping stop(cfg.patience);
  LrSchedule sched(cfg.lr, cfg.lr_decay, cfg.lr_patience, cfg.lr_floor);
  History h;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = sched.lr();
    const double train = hooks.train_epoch(epoch, lr);
    const double val = hooks.validate();
    h.push_back({epoch, train, val, lr});
    if (stop.update(epoch, val)) hooks.save_best();
    sched.update(val);
    if (hooks.on_epoch) hooks.on_epoch(h.back());
    if (stop.should_stop()) break;
  }
  if (stop.best_epoch() > 0) hooks.restore_best();
  return h;
}

// ---------------------------------------------------------------- training

/// Seeded hold-out of a validation subset.
inline std::pair<std::vector<const SampleRecord*>, std::vector<const SampleRecord*>> split_validation(
    std::vector<const SampleRecord*> recs, double val_fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eedull);
  std::shuffle(recs.begin(), recs.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(recs.size())));
  TOPOPT_REQUIRE(n_val >= 1 && n_val < recs.size(), ErrorKind::DatasetTooSmall,
                 std::to_string(recs.size()) + " training samples leave an empty train or validation split");
  std::vector<const SampleRecord*> val(recs.begin(), recs.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<const SampleRecord*> train(recs.begin() + static_cast<std::ptrdiff_t>(n_val), recs.end());
  auto by_id = [](const SampleRecord* a, const SampleRecord* b) { return a->id < b->id; };
  std::sort(val.begin(), val.end(), by_id);
  std::sort(train.begin(), train.end(), by_id);
  return {train, val};
}

/// Batches of `size` consecutive items; a trailing singleton joins the previous batch.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, int size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const auto b = static_cast<std::size_t>(size);
  for (std::size_t i = 0; i < n; i += b) out.emplace_back(i, std::min(n, i + b));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

/// Stacks examples [first, last) step by step.
inline Example stack_examples(const std::vector<Example>& ex, std::size_t first, std::size_t last) {
  Example out;
  const std::size_t steps = ex[first].xs.size();
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<FT> xs, ys;
    for (std::size_t i = first; i < last; ++i) {
      xs.push_back(ex[i].xs[t]);
      ys.push_back(ex[i].ys[t]);
    }
    out.xs.push_back(nn::stack_batch(xs));
    out.ys.push_back(nn::stack_batch(ys));
  }
  return out;
}

/// Mean per-step loss of a batch; optionally back-propagates it.
inline double run_batch(nn::Network<float>& net, Role role, const Example& b, const TrainConfig& cfg, bool train) {
  const auto ys = net.forward_sequence(b.xs, train ? nn::Ctx::training() : nn::Ctx::inference());
  const double w = 1.0 / static_cast<double>(ys.size());
  double loss = 0.0;
  std::vector<FT> gys;
  for (std::size_t t = 0; t < ys.size(); ++t) {
    auto l = role_loss(role, ys[t], b.ys[t], cfg);
    loss += w * l.value;
    if (train) {
      for (auto& g : l.grad.data) g = static_cast<float>(g * w);
      gys.push_back(std::move(l.grad));
    }
  }
  if (train) net.backward_sequence(gys);
  return loss;
}

inline double evaluate_loss(nn::Network<float>& net, Role role, const std::vector<Example>& ex, const TrainConfig& cfg) {
  double total = 0.0;
  for (auto [a, b] : batch_ranges(ex.size(), cfg.batch_size))
    total += run_batch(net, role, stack_examples(ex, a, b), cfg, false) * static_cast<double>(b - a);
  return ex.empty() ? 0.0 : total / static_cast<double>(ex.size());
}

struct RoleModel {
  std::unique_ptr<nn::Network<float>> net;
  History history;
};

/// Trains one network on `train` with validation on `val`.
inline RoleModel train_role(Role role, const std::vector<const SampleRecord*>& train,
                            const std::vector<const SampleRecord*>& val, const TrainConfig& cfg,
                            const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  TOPOPT_REQUIRE(!train.empty() && !val.empty(), ErrorKind::DatasetTooSmall, "empty train or validation split");
  const GridShape grid = train.front()->c0.shape;
  RoleModel m;
  m.net = nn::build<float>(arch_for(role, grid, cfg));
  auto& net = *m.net;
  const auto val_ex = validation_examples(role, val, cfg);
  const bool can_augment = cfg.augment && grid.is_cubic();
  const int n_ops = static_cast<int>(datagen::symmetry_ops(grid.dimensionality).size());
  std::mt19937_64 rng(cfg.seed * 7919ull + static_cast<std::uint64_t>(role));
  std::map<std::string, FT> best;

  FitHooks hooks;
  hooks.train_epoch = [&](int, double lr) {
    std::vector<Example> ex;
    for (const auto* r : train) {
      const int op = can_augment ? std::uniform_int_distribution<int>(0, n_ops - 1)(rng) : -1;
      if (is_pair_role(role)) {
        std::uniform_int_distribution<int> pick(0, pair_count(*r) - 1);
        for (int k = 0; k < cfg.pairs_per_sample; ++k) ex.push_back(make_example(role, *r, pick(rng), op, cfg));
      } else {
        ex.push_back(make_example(role, *r, 0, op, cfg));
      }
    }
    std::shuffle(ex.begin(), ex.end(), rng);
    TOPOPT_REQUIRE(ex.size() >= 2, ErrorKind::DatasetTooSmall, "need at least two training examples per batch");
    double total = 0.0;
    for (auto [a, b] : batch_ranges(ex.size(), cfg.batch_size)) {
      net.params().zero_grad();
      net.clear();
      total += run_batch(net, role, stack_examples(ex, a, b), cfg, true) * static_cast<double>(b - a);
      nn::adam_step(net.params(), nn::AdamConfig{lr});
    }
    net.clear();
    return total / static_cast<double>(ex.size());
  };
  hooks.validate = [&] { return evaluate_loss(net, role, val_ex, cfg); };
  hooks.save_best = [&] {
    for (const auto& [name, p] : net.params()) best[name] = p.value;
  };
  hooks.restore_best = [&] {
    for (auto& [name, p] : net.params()) p.value = best.at(name);
  };
  hooks.on_epoch = on_epoch;
  m.history = fit(cfg, hooks);
  return m;
}

// ---------------------------------------------------------------- bundles

struct TrainedBundle {
  Framework framework = Framework::DOD;
  json config = json::object();  // train config snapshot
  std::map<Role, std::unique_ptr<nn::Network<float>>> nets;
  std::map<Role, History> history;

  nn::Network<float>& net(Role r) const {
    auto it = nets.find(r);
    TOPOPT_REQUIRE(it != nets.end() && it->second, ErrorKind::MissingWeights,
                   "bundle has no '" + to_string(r) + "' network");
    return *it->second;
  }
  bool has(Role r) const { return nets.count(r) > 0; }
  TrainConfig train_config() const { return train_config_from_json(config); }
  const nn::ArchSpec& spec() const { return net(roles_of(framework).front()).spec(); }

  /// Throws MissingWeights unless every role of the framework is present.
  void check() const {
    for (auto r : roles_of(framework)) net(r);
  }
};

/// Trains every network of `framework` on the train split of `ds`.
inline TrainedBundle train_framework(Framework framework, const datagen::Dataset& ds, const TrainConfig& cfg,
                                     const std::function<void(Role, const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  auto [train, val] = split_validation(ds.split(datagen::Split::Train), cfg.val_fraction, cfg.seed);
  TrainedBundle b;
  b.framework = framework;
  b.config = to_json(cfg);
  for (auto role : roles_of(framework)) {
    std::function<void(const EpochRecord&)> cb;
    if (on_epoch) cb = [&, role](const EpochRecord& e) { on_epoch(role, e); };
    auto m = train_role(role, train, val, cfg, cb);
    b.nets[role] = std::move(m.net);
    b.history[role] = std::move(m.history);
  }
  return b;
}

inline io::Container bundle_to_container(const TrainedBundle& b) {
  io::Container c;
  c.kind = "bundle";
  json roles = json::object();
  for (const auto& [role, net] : b.nets) {
    const auto name = to_string(role);
    auto h = b.history.find(role);
    roles[name] = {{"arch", net->spec()}, {"history", h == b.history.end() ? json::array() : to_json(h->second)}};
    for (const auto& [pname, p] : net->params()) {
      std::vector<std::int64_t> shape(p.value.shape.begin(), p.value.shape.end());
      c.blocks.push_back(io::Block::of(name + "/" + pname, shape, std::vector<float>(p.value.data.begin(), p.value.data.end())));
    }
  }
  c.meta = json{{"framework", to_string(b.framework)}, {"config", b.config}, {"roles", roles}};
  return c;
}

inline TrainedBundle bundle_from_container(const io::Container& c) {
  TOPOPT_REQUIRE(c.kind == "bundle", ErrorKind::CorruptHeader, "container holds '" + c.kind + "', not a bundle");
  TrainedBundle b;
  try {
    b.framework = framework_from_string(c.meta.at("framework").get<std::string>());
    b.config = c.meta.at("config");
    for (const auto& [name, jr] : c.meta.at("roles").items()) {
      const Role role = role_from_string(name);
      auto net = nn::build<float>(nn::arch_spec_from_json(jr.at("arch")));
      for (auto& [pname, p] : net->params()) {
        const auto key = name + "/" + pname;
        TOPOPT_REQUIRE(c.has(key), ErrorKind::MissingWeights, "bundle lacks weights '" + key + "'");
        const auto& blk = c.block(key);
        TOPOPT_REQUIRE(nn::Shape(blk.shape.begin(), blk.shape.end()) == p.value.shape, ErrorKind::ShapeMismatch,
                       "weights '" + key + "' have the wrong shape");
        const auto v = blk.as<float>();
        p.value.data.assign(v.begin(), v.end());
      }
      b.nets[role] = std::move(net);
      b.history[role] = history_from_json(jr.at("history"));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CorruptHeader, std::string("bundle metadata: ") + e.what());
  }
  b.check();
  return b;
}

inline void save_bundle(const std::string& path, const TrainedBundle& b) { io::write_container(path, bundle_to_container(b)); }
inline TrainedBundle load_bundle(const std::string& path) { return bundle_from_container(io::read_container(path)); }

// ---------------------------------------------------------------- inference

namespace detail {

inline FT run(nn::Network<float>& net, const FT& x) { return net.forward(x, nn::Ctx::inference()); }

}  // namespace detail

/// Direct prediction of the final density from (C0, vf).
inline DensityField infer_dod(const TrainedBundle& b, const ComplianceField& c0, double vf) {
  auto& net = b.net(Role::DOD);
  const DensityField v(c0.shape, vf);
  return unpack<DensityTag>(detail::run(net, pack({&c0.values, &v.values}, c0.shape)), c0.shape);
}

struct DsResult {
  std::vector<DensityField> trace;  // D_1 .. D_{k+1}
  const DensityField& final_density() const { return trace.back(); }
};

/// D_1 = IDPN(C0, vf), then k DTN steps on the two latest densities with the
/// recurrent state carried along. k < 0 selects the trained unroll length.
inline DsResult infer_ds(const TrainedBundle& b, const ComplianceField& c0, double vf, int k = -1) {
  auto& idpn = b.net(Role::IDPN);
  auto& dtn = b.net(Role::DTN);
  if (k < 0) k = dtn.spec().unroll_len;
  const GridShape& g = c0.shape;
  const DensityField v(g, vf);
  DsResult out;
  DensityField prev(g, vf);
  out.trace.push_back(unpack<DensityTag>(detail::run(idpn, pack({&c0.values, &v.values}, g)), g));
  dtn.reset_state(1);
  for (int i = 0; i < k; ++i) {
    const auto& cur = out.trace.back();
    auto next = unpack<DensityTag>(dtn.step(pack({&prev.values, &cur.values}, g), nn::Ctx::inference()), g);
    prev = cur;
    out.trace.push_back(std::move(next));
  }
  return out;
}

struct CdcsResult {
  std::vector<DensityField> densities;        // D_1 .. D_5
  std::vector<ComplianceField> compliances;  // C_1 .. C_5
  DensityField final_density;
  std::vector<Role> calls;  // network invocation order
};

/// Five coupled rounds D_{i+1} = DPN(D_i, C_i), C_{i+1} = CPN(D_{i+1}, C_0),
/// then FDPN(D_5).
inline CdcsResult infer_cdcs(const TrainedBundle& b, const ComplianceField& c0, double vf) {
  auto& dpn = b.net(Role::DPN);
  auto& cpn = b.net(Role::CPN);
  auto& fdpn = b.net(Role::FDPN);
  const GridShape& g = c0.shape;
  CdcsResult out;
  DensityField d(g, vf);
  ComplianceField c = c0;
  for (int i = 0; i < kCdcsSteps; ++i) {
    d = unpack<DensityTag>(detail::run(dpn, pack({&d.values, &c.values}, g)), g);
    out.calls.push_back(Role::DPN);
    c = unpack<ComplianceTag>(detail::run(cpn, pack({&d.values, &c0.values}, g)), g);
    out.calls.push_back(Role::CPN);
    out.densities.push_back(d);
    out.compliances.push_back(c);
  }
  out.final_density = unpack<DensityTag>(detail::run(fdpn, pack({&d.values}, g)), g);
  out.calls.push_back(Role::FDPN);
  return out;
}

/// Final density of whichever framework the bundle holds.
inline DensityField infer(const TrainedBundle& b, const ComplianceField& c0, double vf) {
  switch (b.framework) {
    case Framework::DOD: return infer_dod(b, c0, vf);
    case Framework::DS: return infer_ds(b, c0, vf).final_density();
    case Framework::CDCS: return infer_cdcs(b, c0, vf).final_density;
  }
  return infer_dod(b, c0, vf);
}

/// Sum of CPN element compliances for `density`, mapped back through the
/// sample's C0 normalization.
inline double tc_cpn(const TrainedBundle& b, const DensityField& density, const ComplianceField& c0,
                     const datagen::NormalizationConstants& norm) {
  auto& cpn = b.net(Role::CPN);
  const auto c = unpack<ComplianceTag>(detail::run(cpn, pack({&density.values, &c0.values}, c0.shape)), c0.shape);
  return datagen::invert_normalization(c, norm).sum();
}

inline metrics::DensityPredictor predictor(const TrainedBundle& b) {
  b.check();
  return [&b](const SampleRecord& r) { return infer(b, r.c0, r.target_vf()); };
}

/// "fea" re-solves; "cpn" needs a bundle with a CPN (any framework's may be passed).
inline metrics::TcEvaluator tc_evaluator(const std::string& mode, const TrainedBundle* cpn_bundle = nullptr) {
  if (mode == "fea") return metrics::fea_tc();
  TOPOPT_REQUIRE(mode == "cpn", ErrorKind::InvalidArgument, "tc mode must be 'fea' or 'cpn'");
  TOPOPT_REQUIRE(cpn_bundle && cpn_bundle->has(Role::CPN), ErrorKind::MissingWeights, "cpn mode needs a trained CPN");
  return [cpn_bundle](const SampleRecord& r, const DensityField& d) { return tc_cpn(*cpn_bundle, d, r.c0, r.c0_norm); };
}

inline metrics::EvalReport evaluate(const TrainedBundle& b, const std::vector<const SampleRecord*>& recs,
                                    const std::string& tc_mode = "fea") {
  return metrics::evaluate(recs, predictor(b), tc_evaluator(tc_mode, &b), to_string(b.framework), tc_mode);
}

}  // namespace topopt::pipelines
