// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "topopt/nn/layers.hpp"

namespace topopt::nn {

enum class ArchKind { UNet, EncoderDecoder, USEResNet, CnnLstm };

inline std::string to_string(ArchKind k) {
  switch (k) {
    case ArchKind::UNet: return "unet";
    case ArchKind::EncoderDecoder: return "encoder_decoder";
    case ArchKind::USEResNet: return "use_resnet";
    case ArchKind::CnnLstm: return "cnn_lstm";
  }
  return "?";
}

inline ArchKind arch_kind_from_string(const std::string& s) {
  for (auto k : {ArchKind::UNet, ArchKind::EncoderDecoder, ArchKind::USEResNet, ArchKind::CnnLstm})
    if (to_string(k) == s) return k;
  throw Error(ErrorKind::InvalidArgument, "unknown architecture '" + s + "'");
}

struct ArchSpec {
  ArchKind kind = ArchKind::UNet;
  int dims = 2;
  std::vector<int> spatial{32, 32};  // per-axis element counts, slow axis first (z, y, x)
  int input_channels = 2;
  int base_channels = 16;
  int depth = 3;
  int se_reduction = 4;     // use_resnet
  int res_blocks = 2;       // use_resnet
  int lstm_hidden = 128;    // cnn_lstm
  int unroll_len = 10;      // cnn_lstm
  bool transposed_up = false;
  bool skips = true;        // cnn_lstm: encoder-decoder skips per step
  std::uint64_t seed = 0;

  void validate() const {
    TOPOPT_REQUIRE(dims == 2 || dims == 3, ErrorKind::InvalidArgument, "dims must be 2 or 3");
    TOPOPT_REQUIRE(static_cast<int>(spatial.size()) == dims, ErrorKind::InvalidArgument, "spatial rank differs from dims");
    TOPOPT_REQUIRE(depth >= 1, ErrorKind::InvalidArgument, "depth must be >= 1");
    TOPOPT_REQUIRE(input_channels >= 1 && base_channels >= 1, ErrorKind::InvalidArgument, "channel counts must be >= 1");
    for (int s : spatial)
      TOPOPT_REQUIRE(s > 0 && s % (1 << depth) == 0, ErrorKind::IndivisibleResolution,
                     "spatial extent " + std::to_string(s) + " not divisible by 2^" + std::to_string(depth));
    if (kind == ArchKind::USEResNet) {
      TOPOPT_REQUIRE(se_reduction >= 1 && res_blocks >= 0, ErrorKind::InvalidArgument, "bad SE settings");
      TOPOPT_REQUIRE((base_channels << depth) % se_reduction == 0, ErrorKind::ShapeMismatch,
                     "bottleneck width not divisible by se_reduction");
    }
    if (kind == ArchKind::CnnLstm)
      TOPOPT_REQUIRE(lstm_hidden >= 1 && unroll_len >= 1, ErrorKind::InvalidArgument, "bad LSTM settings");
  }

  int width(int level) const { return base_channels << level; }

  Shape input_shape(int n) const {
    Shape s{n, input_channels};
    s.insert(s.end(), spatial.begin(), spatial.end());
    return s;
  }
  Shape output_shape(int n) const {
    Shape s{n, 1};
    s.insert(s.end(), spatial.begin(), spatial.end());
    return s;
  }
};

inline void to_json(nlohmann::json& j, const ArchSpec& a) {
  j = nlohmann::json{{"kind", to_string(a.kind)},   {"dims", a.dims},
                     {"spatial", a.spatial},        {"input_channels", a.input_channels},
                     {"base_channels", a.base_channels}, {"depth", a.depth},
                     {"se_reduction", a.se_reduction},   {"res_blocks", a.res_blocks},
                     {"lstm_hidden", a.lstm_hidden},     {"unroll_len", a.unroll_len},
                     {"transposed_up", a.transposed_up}, {"skips", a.skips},
                     {"seed", a.seed}};
}

inline ArchSpec arch_spec_from_json(const nlohmann::json& j, ArchSpec a = {}) {
  if (j.contains("kind")) a.kind = arch_kind_from_string(j.at("kind").get<std::string>());
  auto get = [&](const char* k, auto& v) {
    if (j.contains(k)) j.at(k).get_to(v);
  };
  get("dims", a.dims);
  get("spatial", a.spatial);
  get("input_channels", a.input_channels);
  get("base_channels", a.base_channels);
  get("depth", a.depth);
  get("se_reduction", a.se_reduction);
  get("res_blocks", a.res_blocks);
  get("lstm_hidden", a.lstm_hidden);
  get("unroll_len", a.unroll_len);
  get("transposed_up", a.transposed_up);
  get("skips", a.skips);
  get("seed", a.seed);
  return a;
}

// ---------------------------------------------------------------- blocks

/// [conv3 -> ReLU -> BN] x 2
template <class T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(ParamSet<T>& ps, const std::string& name, int dims, int cin, int cout, InitRng& rng)
      : c1_(ps, name + ".conv1", dims, cin, cout, 3, rng),
        c2_(ps, name + ".conv2", dims, cout, cout, 3, rng),
        b1_(ps, name + ".bn1", cout),
        b2_(ps, name + ".bn2", cout) {}
  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    auto y = b1_.forward(r1_.forward(c1_.forward(x, ctx), ctx), ctx);
    return b2_.forward(r2_.forward(c2_.forward(y, ctx), ctx), ctx);
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    auto g = c2_.backward(r2_.backward(b2_.backward(gy)));
    return c1_.backward(r1_.backward(b1_.backward(g)));
  }
  void clear() {
    c1_.clear(), c2_.clear(), r1_.clear(), r2_.clear(), b1_.clear(), b2_.clear();
  }

 private:
  Conv<T> c1_, c2_;
  ReLU<T> r1_, r2_;
  BatchNorm<T> b1_, b2_;
};

/// out = x + SE(conv3 -> BN -> ReLU -> conv3 -> BN)(x)
template <class T>
class SEResBlock {
 public:
  SEResBlock() = default;
  SEResBlock(ParamSet<T>& ps, const std::string& name, int dims, int c, int reduction, InitRng& rng)
      : c1_(ps, name + ".conv1", dims, c, c, 3, rng),
        c2_(ps, name + ".conv2", dims, c, c, 3, rng),
        b1_(ps, name + ".bn1", c),
        b2_(ps, name + ".bn2", c),
        se_(ps, name + ".se", c, reduction, rng) {}
  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    auto y = r_.forward(b1_.forward(c1_.forward(x, ctx), ctx), ctx);
    y = se_.forward(b2_.forward(c2_.forward(y, ctx), ctx), ctx);
    y += x;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    auto g = c2_.backward(b2_.backward(se_.backward(gy)));
    g = c1_.backward(b1_.backward(r_.backward(g)));
    g += gy;
    return g;
  }
  BatchNorm<T>& last_bn() { return b2_; }
  SEGate<T>& se() { return se_; }
  void clear() { c1_.clear(), c2_.clear(), b1_.clear(), b2_.clear(), r_.clear(), se_.clear(); }

 private:
  Conv<T> c1_, c2_;
  BatchNorm<T> b1_, b2_;
  ReLU<T> r_;
  SEGate<T> se_;
};

/// x2 upsampling: nearest-neighbour, or a learned k=2 stride-2 transposed conv.
template <class T>
class UpStage {
 public:
  UpStage() = default;
  UpStage(ParamSet<T>& ps, const std::string& name, int dims, int channels, bool transposed, InitRng& rng)
      : transposed_(transposed) {
    if (transposed) deconv_ = Deconv<T>(ps, name + ".deconv", dims, channels, channels, 2, rng);
  }
  Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    return transposed_ ? deconv_.forward(x, ctx) : nearest_.forward(x, ctx);
  }
  Tensor<T> backward(const Tensor<T>& gy) { return transposed_ ? deconv_.backward(gy) : nearest_.backward(gy); }
  void clear() { deconv_.clear(), nearest_.clear(); }

 private:
  bool transposed_ = false;
  Deconv<T> deconv_;
  Upsample<T> nearest_{2};
};

// ---------------------------------------------------------------- networks

/// Common surface for every architecture. Non-recurrent networks treat a
/// sequence as independent steps; the CNN-LSTM carries state across steps.
template <class T>
class Network {
 public:
  explicit Network(ArchSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  virtual ~Network() = default;

  const ArchSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return ps_; }
  const ParamSet<T>& params() const { return ps_; }

  /// Single forward pass; a recurrent net starts from a zero state.
  virtual Tensor<T> forward(const Tensor<T>& x, const Ctx& ctx) {
    reset_state(x(0));
    return step(x, ctx);
  }
  virtual Tensor<T> backward(const Tensor<T>& gy) { return backward_sequence({gy}).front(); }

  /// Starts a new sequence for a batch of n.
  virtual void reset_state(int /*n*/) {}
  /// One step of the current sequence.
  Tensor<T> step(const Tensor<T>& x, const Ctx& ctx) {
    ++calls_;
    return do_step(x, ctx);
  }
  /// Back-propagates the recorded steps; gys[t] is dL/dy_t. Returns dL/dx_t.
  virtual std::vector<Tensor<T>> backward_sequence(const std::vector<Tensor<T>>& gys) = 0;

  std::vector<Tensor<T>> forward_sequence(const std::vector<Tensor<T>>& xs, const Ctx& ctx) {
    TOPOPT_REQUIRE(!xs.empty(), ErrorKind::InvalidArgument, "empty sequence");
    reset_state(xs.front()(0));
    std::vector<Tensor<T>> ys;
    for (const auto& x : xs) ys.push_back(step(x, ctx));
    return ys;
  }

  virtual void clear() = 0;

  /// Number of forward steps run since construction or reset_calls().
  std::size_t calls() const { return calls_; }
  void reset_calls() { calls_ = 0; }

 protected:
  virtual Tensor<T> do_step(const Tensor<T>& x, const Ctx& ctx) = 0;

  void check_input(const Tensor<T>& x) const {
    TOPOPT_REQUIRE(x.dim() == spec_.dims + 2 && x.shape == spec_.input_shape(x(0)), ErrorKind::ShapeMismatch,
                   "network input " + shape_str(x.shape) + " does not match " + shape_str(spec_.input_shape(x(0))));
  }

  ArchSpec spec_;
  ParamSet<T> ps_;
  std::size_t calls_ = 0;
};

/// U-Net family: unet (skips), encoder_decoder (no skips), use_resnet
/// (skips + SE-ResNet bottleneck blocks).
template <class T>
class UNet : public Network<T> {
 public:
  explicit UNet(const ArchSpec& spec) : Network<T>(spec) {
    const auto& s = this->spec_;
    TOPOPT_REQUIRE(s.kind != ArchKind::CnnLstm, ErrorKind::InvalidArgument, "UNet built from a cnn_lstm spec");
    skips_ = s.kind != ArchKind::EncoderDecoder;
    auto& ps = this->ps_;
    InitRng rng(s.seed);
    for (int l = 0; l < s.depth; ++l) {
      enc_.emplace_back(ps, "enc" + std::to_string(l), s.dims, l == 0 ? s.input_channels : s.width(l - 1), s.width(l), rng);
      pools_.emplace_back(2);
    }
    bottleneck_ = ConvBlock<T>(ps, "bottleneck", s.dims, s.width(s.depth - 1), s.width(s.depth), rng);
    if (s.kind == ArchKind::USEResNet)
      for (int r = 0; r < s.res_blocks; ++r)
        res_.emplace_back(ps, "res" + std::to_string(r), s.dims, s.width(s.depth), s.se_reduction, rng);
    for (int l = s.depth - 1; l >= 0; --l) {
      const int below = s.width(l + 1);
      ups_.emplace_back(ps, "up" + std::to_string(l), s.dims, below, s.transposed_up, rng);
      dec_.emplace_back(ps, "dec" + std::to_string(l), s.dims, below + (skips_ ? s.width(l) : 0), s.width(l), rng);
    }
    head_ = Conv<T>(ps, "head", s.dims, s.width(0), 1, 1, rng);
  }

  std::vector<SEResBlock<T>>& res_blocks() { return res_; }

  Tensor<T> do_step(const Tensor<T>& x, const Ctx& ctx) override {
    this->check_input(x);
    const int d = this->spec_.depth;
    std::vector<Tensor<T>> skip(static_cast<std::size_t>(d));
    Tensor<T> h = x;
    for (int l = 0; l < d; ++l) {
      h = enc_[static_cast<std::size_t>(l)].forward(h, ctx);
      if (skips_) skip[static_cast<std::size_t>(l)] = h;
      h = pools_[static_cast<std::size_t>(l)].forward(h, ctx);
    }
    h = bottleneck_.forward(h, ctx);
    for (auto& r : res_) h = r.forward(h, ctx);
    for (int i = 0; i < d; ++i) {
      const int l = d - 1 - i;
      h = ups_[static_cast<std::size_t>(i)].forward(h, ctx);
      if (skips_) h = concat_channels(h, skip[static_cast<std::size_t>(l)]);
      h = dec_[static_cast<std::size_t>(i)].forward(h, ctx);
    }
    return sig_.forward(head_.forward(h, ctx), ctx);
  }

  std::vector<Tensor<T>> backward_sequence(const std::vector<Tensor<T>>& gys) override {
    std::vector<Tensor<T>> gxs(gys.size());
    for (std::size_t t = gys.size(); t-- > 0;) gxs[t] = backward_one(gys[t]);
    return gxs;
  }

  void clear() override {
    for (auto& e : enc_) e.clear();
    for (auto& p : pools_) p.clear();
    bottleneck_.clear();
    for (auto& r : res_) r.clear();
    for (auto& u : ups_) u.clear();
    for (auto& b : dec_) b.clear();
    head_.clear();
    sig_.clear();
  }

 private:
  Tensor<T> backward_one(const Tensor<T>& gy) {
    const auto& s = this->spec_;
    const int d = s.depth;
    std::vector<Tensor<T>> gskip(static_cast<std::size_t>(d));
    Tensor<T> g = head_.backward(sig_.backward(gy));
    for (int i = d - 1; i >= 0; --i) {
      const int l = d - 1 - i;
      g = dec_[static_cast<std::size_t>(i)].backward(g);
      if (skips_) {
        auto parts = split_channels(g, s.width(l + 1));
        g = std::move(parts.first);
        gskip[static_cast<std::size_t>(l)] = std::move(parts.second);
      }
      g = ups_[static_cast<std::size_t>(i)].backward(g);
    }
    for (auto it = res_.rbegin(); it != res_.rend(); ++it) g = it->backward(g);
    g = bottleneck_.backward(g);
    for (int l = d - 1; l >= 0; --l) {
      g = pools_[static_cast<std::size_t>(l)].backward(g);
      if (skips_) g += gskip[static_cast<std::size_t>(l)];
      g = enc_[static_cast<std::size_t>(l)].backward(g);
    }
    return g;
  }

  bool skips_ = true;
  std::vector<ConvBlock<T>> enc_, dec_;
  std::vector<MaxPool<T>> pools_;
  ConvBlock<T> bottleneck_;
  std::vector<SEResBlock<T>> res_;
  std::vector<UpStage<T>> ups_;
  Conv<T> head_;
  Sigmoid<T> sig_;
};

/// Conv encoder -> flatten -> LSTM -> dense -> reshape -> conv decoder -> sigmoid,
/// with optional per-step encoder/decoder skips. State persists across step().
template <class T>
class CnnLstm : public Network<T> {
 public:
  explicit CnnLstm(const ArchSpec& spec) : Network<T>(spec) {
    const auto& s = this->spec_;
    TOPOPT_REQUIRE(s.kind == ArchKind::CnnLstm, ErrorKind::InvalidArgument, "CnnLstm needs a cnn_lstm spec");
    auto& ps = this->ps_;
    InitRng rng(s.seed);
    for (int l = 0; l < s.depth; ++l) {
      enc_.emplace_back(ps, "enc" + std::to_string(l), s.dims, l == 0 ? s.input_channels : s.width(l - 1), s.width(l), rng);
      pools_.emplace_back(2);
    }
    latent_shape_ = {s.width(s.depth - 1)};
    latent_ = s.width(s.depth - 1);
    for (int e : s.spatial) {
      latent_shape_.push_back(e >> s.depth);
      latent_ *= e >> s.depth;
    }
    lstm_ = LstmCell<T>(ps, "lstm", latent_, s.lstm_hidden, rng);
    proj_ = Dense<T>(ps, "proj", s.lstm_hidden, latent_, rng);
    for (int l = s.depth - 1; l >= 0; --l) {
      const int below = l == s.depth - 1 ? s.width(l) : s.width(l + 1);
      ups_.emplace_back(ps, "up" + std::to_string(l), s.dims, below, s.transposed_up, rng);
      dec_.emplace_back(ps, "dec" + std::to_string(l), s.dims, below + (s.skips ? s.width(l) : 0), s.width(l), rng);
    }
    head_ = Conv<T>(ps, "head", s.dims, s.width(0), 1, 1, rng);
  }

  int latent_size() const { return latent_; }

  void reset_state(int n) override {
    h_ = Tensor<T>({n, this->spec_.lstm_hidden});
    c_ = h_;
    steps_ = 0;
  }

  Tensor<T> do_step(const Tensor<T>& x, const Ctx& ctx) override {
    this->check_input(x);
    const auto& s = this->spec_;
    const int n = x(0), d = s.depth;
    if (h_.shape.empty() || h_(0) != n) reset_state(n);
    std::vector<Tensor<T>> skip(static_cast<std::size_t>(d));
    Tensor<T> h = x;
    for (int l = 0; l < d; ++l) {
      h = enc_[static_cast<std::size_t>(l)].forward(h, ctx);
      if (s.skips) skip[static_cast<std::size_t>(l)] = h;
      h = pools_[static_cast<std::size_t>(l)].forward(h, ctx);
    }
    std::tie(h_, c_) = lstm_.forward(h.reshaped({n, latent_}), h_, c_, ctx);
    Shape ls{n};
    ls.insert(ls.end(), latent_shape_.begin(), latent_shape_.end());
    h = proj_.forward(h_, ctx).reshaped(ls);
    for (int i = 0; i < d; ++i) {
      const int l = d - 1 - i;
      h = ups_[static_cast<std::size_t>(i)].forward(h, ctx);
      if (s.skips) h = concat_channels(h, skip[static_cast<std::size_t>(l)]);
      h = dec_[static_cast<std::size_t>(i)].forward(h, ctx);
    }
    if (ctx.record) ++steps_;
    return sig_.forward(head_.forward(h, ctx), ctx);
  }

  std::vector<Tensor<T>> backward_sequence(const std::vector<Tensor<T>>& gys) override {
    TOPOPT_REQUIRE(static_cast<int>(gys.size()) == steps_, ErrorKind::InvalidArgument,
                   "backward_sequence needs one gradient per recorded step");
    const auto& s = this->spec_;
    const int d = s.depth;
    std::vector<Tensor<T>> gxs(gys.size());
    Tensor<T> dh, dc;
    for (std::size_t t = gys.size(); t-- > 0;) {
      const int n = gys[t](0);
      if (dh.shape.empty()) {
        dh = Tensor<T>({n, s.lstm_hidden});
        dc = dh;
      }
      std::vector<Tensor<T>> gskip(static_cast<std::size_t>(d));
      Tensor<T> g = head_.backward(sig_.backward(gys[t]));
      for (int i = d - 1; i >= 0; --i) {
        const int l = d - 1 - i;
        g = dec_[static_cast<std::size_t>(i)].backward(g);
        if (s.skips) {
          auto parts = split_channels(g, l == d - 1 ? s.width(l) : s.width(l + 1));
          g = std::move(parts.first);
          gskip[static_cast<std::size_t>(l)] = std::move(parts.second);
        }
        g = ups_[static_cast<std::size_t>(i)].backward(g);
      }
      dh += proj_.backward(g.reshaped({n, latent_}));
      auto lg = lstm_.backward(dh, dc);
      dh = std::move(lg.dh_prev);
      dc = std::move(lg.dc_prev);
      Shape ls{n};
      ls.insert(ls.end(), latent_shape_.begin(), latent_shape_.end());
      g = lg.dx.reshaped(ls);
      for (int l = d - 1; l >= 0; --l) {
        g = pools_[static_cast<std::size_t>(l)].backward(g);
        if (s.skips) g += gskip[static_cast<std::size_t>(l)];
        g = enc_[static_cast<std::size_t>(l)].backward(g);
      }
      gxs[t] = std::move(g);
    }
    steps_ = 0;
    return gxs;
  }

  void clear() override {
    for (auto& e : enc_) e.clear();
    for (auto& p : pools_) p.clear();
    lstm_.clear();
    proj_.clear();
    for (auto& u : ups_) u.clear();
    for (auto& b : dec_) b.clear();
    head_.clear();
    sig_.clear();
    steps_ = 0;
  }

 private:
  std::vector<ConvBlock<T>> enc_, dec_;
  std::vector<MaxPool<T>> pools_;
  LstmCell<T> lstm_;
  Dense<T> proj_;
  std::vector<UpStage<T>> ups_;
  Conv<T> head_;
  Sigmoid<T> sig_;
  Shape latent_shape_;
  int latent_ = 0;
  Tensor<T> h_, c_;
  int steps_ = 0;
};

template <class T>
std::unique_ptr<Network<T>> build(const ArchSpec& spec) {
  if (spec.kind == ArchKind::CnnLstm) return std::make_unique<CnnLstm<T>>(spec);
  return std::make_unique<UNet<T>>(spec);
}

}  // namespace topopt::nn
