// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "topopt/nn/gradcheck.hpp"
#include "topopt/nn/layers.hpp"
#include "topopt/nn/losses.hpp"

using namespace topopt;
using namespace topopt::nn;

namespace {

using TD = Tensor<double>;

TD random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  TD t(std::move(s));
  std::uniform_real_distribution<double> ud(lo, hi);
  for (auto& v : t.data) v = ud(rng);
  return t;
}

double dot(const TD& a, const TD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Plain nested-loop 2D cross-correlation.
TD conv2d_loops(const TD& x, const TD& w, const TD& b, int stride, int pad) {
  const int N = x(0), C = x(1), H = x(2), W = x(3), O = w(0), K = w(2);
  const int Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  TD y({N, O, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          double s = b[static_cast<std::size_t>(o)];
          for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < K; ++ki)
              for (int kj = 0; kj < K; ++kj) {
                const int yi = i * stride - pad + ki, xj = j * stride - pad + kj;
                if (yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                s += w[static_cast<std::size_t>(((o * C + c) * K + ki) * K + kj)] *
                     x[static_cast<std::size_t>(((n * C + c) * H + yi) * W + xj)];
              }
          y[static_cast<std::size_t>(((n * O + o) * Ho + i) * Wo + j)] = s;
        }
  return y;
}

TD conv3d_loops(const TD& x, const TD& w, const TD& b, int pad) {
  const int N = x(0), C = x(1), D = x(2), H = x(3), W = x(4), O = w(0), K = w(2);
  const int Do = D + 2 * pad - K + 1, Ho = H + 2 * pad - K + 1, Wo = W + 2 * pad - K + 1;
  TD y({N, O, Do, Ho, Wo});
  std::size_t q = 0;
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int d = 0; d < Do; ++d)
        for (int i = 0; i < Ho; ++i)
          for (int j = 0; j < Wo; ++j, ++q) {
            double s = b[static_cast<std::size_t>(o)];
            for (int c = 0; c < C; ++c)
              for (int kd = 0; kd < K; ++kd)
                for (int ki = 0; ki < K; ++ki)
                  for (int kj = 0; kj < K; ++kj) {
                    const int zd = d - pad + kd, yi = i - pad + ki, xj = j - pad + kj;
                    if (zd < 0 || zd >= D || yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                    s += w[static_cast<std::size_t>((((o * C + c) * K + kd) * K + ki) * K + kj)] *
                         x[static_cast<std::size_t>((((n * C + c) * D + zd) * H + yi) * W + xj)];
                  }
            y[q] = s;
          }
  return y;
}

// Projects a layer output onto a fixed random tensor so the loss is a scalar.
struct Projection {
  TD r;
  double operator()(const TD& y) {
    if (r.shape != y.shape) {
      std::mt19937_64 rng(99);
      r = random_tensor(y.shape, rng);
    }
    return dot(r, y);
  }
};

}  // namespace

// ---------------------------------------------------------------- conv

TEST(Conv, UnitPointwiseKernelIsIdentity) {
  std::mt19937_64 rng(1);
  const TD x = random_tensor({2, 1, 4, 5}, rng);
  const TD w({1, 1, 1, 1}, 1.0), b({1});
  EXPECT_EQ(conv_forward(x, w, b, 1, 0), x);
}

TEST(Conv, ZeroKernelGivesBias) {
  std::mt19937_64 rng(2);
  const TD x = random_tensor({1, 3, 5, 5}, rng);
  const TD w({2, 3, 3, 3}), b({2}, std::vector<double>{0.25, -1.5});
  const auto y = conv_forward(x, w, b, 1, 1);
  ASSERT_EQ(y.shape, Shape({1, 2, 5, 5}));
  for (int c = 0; c < 2; ++c)
    for (std::size_t s = 0; s < 25; ++s) EXPECT_EQ(y[static_cast<std::size_t>(c) * 25 + s], b[static_cast<std::size_t>(c)]);
}

TEST(Conv, ForwardMatchesLoopOracle) {
  std::mt19937_64 rng(3);
  const TD x = random_tensor({1, 4, 5, 5}, rng);
  const TD w = random_tensor({3, 4, 3, 3}, rng), b = random_tensor({3}, rng);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{1, 0}, std::pair{2, 1}, std::pair{2, 0}}) {
    const auto y = conv_forward(x, w, b, stride, pad);
    const auto ref = conv2d_loops(x, w, b, stride, pad);
    ASSERT_EQ(y.shape, ref.shape);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv, Forward3dMatchesLoopOracle) {
  std::mt19937_64 rng(4);
  const TD x = random_tensor({2, 2, 4, 3, 5}, rng);
  const TD w = random_tensor({3, 2, 3, 3, 3}, rng), b = random_tensor({3}, rng);
  const auto y = conv_forward(x, w, b, 1, 1);
  const auto ref = conv3d_loops(x, w, b, 1);
  ASSERT_EQ(y.shape, ref.shape);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv, ChannelMismatchThrows) {
  const TD x({1, 2, 4, 4}), w({1, 3, 3, 3}), b({1});
  try {
    conv_forward(x, w, b, 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(Conv, GradientsMatchFiniteDifferences) {
  for (int dims : {2, 3}) {
    ParamSet<double> ps;
    InitRng irng(5);
    Conv<double> conv(ps, "c", dims, 4, 3, 3, irng);
    std::mt19937_64 rng(6);
    TD x = random_tensor(dims == 2 ? Shape{1, 4, 5, 5} : Shape{1, 4, 3, 4, 3}, rng);
    Projection proj;
    auto loss = [&] { return proj(conv.forward(x, Ctx::inference())); };
    auto back = [&] {
      ps.zero_grad();
      const auto y = conv.forward(x, Ctx::training());
      proj(y);
      return std::vector<TD>{conv.backward(proj.r)};
    };
    const auto rep = gradient_check(ps, {&x}, loss, back);
    EXPECT_LT(rep.max_rel_err, 1e-6) << dims << "D worst " << rep.worst;
    EXPECT_EQ(rep.checked, ps.count() + x.size());
  }
}

TEST(Conv, StridedGradientsMatchFiniteDifferences) {
  ParamSet<double> ps;
  InitRng irng(7);
  Conv<double> conv(ps, "c", 2, 2, 3, 3, irng, 2, 1);
  std::mt19937_64 rng(8);
  TD x = random_tensor({2, 2, 7, 7}, rng);
  Projection proj;
  auto loss = [&] { return proj(conv.forward(x, Ctx::inference())); };
  auto back = [&] {
    ps.zero_grad();
    proj(conv.forward(x, Ctx::training()));
    return std::vector<TD>{conv.backward(proj.r)};
  };
  EXPECT_LT(gradient_check(ps, {&x}, loss, back).max_rel_err, 1e-6);
}

TEST(Deconv, DoublesResolutionAndGradientsMatch) {
  for (int dims : {2, 3}) {
    ParamSet<double> ps;
    InitRng irng(9);
    Deconv<double> up(ps, "u", dims, 3, 2, 2, irng);
    std::mt19937_64 rng(10);
    TD x = random_tensor(dims == 2 ? Shape{2, 3, 3, 4} : Shape{1, 3, 2, 3, 2}, rng);
    const auto y = up.forward(x, Ctx::inference());
    EXPECT_EQ(y.shape, dims == 2 ? Shape({2, 2, 6, 8}) : Shape({1, 2, 4, 6, 4}));
    Projection proj;
    auto loss = [&] { return proj(up.forward(x, Ctx::inference())); };
    auto back = [&] {
      ps.zero_grad();
      proj(up.forward(x, Ctx::training()));
      return std::vector<TD>{up.backward(proj.r)};
    };
    EXPECT_LT(gradient_check(ps, {&x}, loss, back).max_rel_err, 1e-6) << dims;
  }
}

TEST(Deconv, SingleInputPixelStampsKernel) {
  // Stride equals kernel size: each input pixel writes one disjoint k×k block.
  TD x({1, 1, 1, 2}, std::vector<double>{2.0, -1.0});
  TD w({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  TD b({1}, std::vector<double>{0.5});
  const auto y = deconv_forward(x, w, b, 2, 0);
  const std::vector<double> expect{2.5, 4.5, -0.5, -1.5, 6.5, 8.5, -2.5, -3.5};
  EXPECT_EQ(y.shape, Shape({1, 1, 2, 4}));
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_DOUBLE_EQ(y[i], expect[i]);
}

// ---------------------------------------------------------------- pool / upsample

TEST(MaxPool, ConstantFieldRoutesGradientToFirstElement) {
  const TD x({1, 1, 4, 4}, 3.0);
  std::vector<std::size_t> arg;
  const auto y = maxpool_forward(x, 2, arg);
  ASSERT_EQ(y.shape, Shape({1, 1, 2, 2}));
  for (double v : y.data) EXPECT_EQ(v, 3.0);
  const auto gx = maxpool_backward(x.shape, TD(y.shape, 1.0), arg);
  const Storage<double> expect{1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0};
  EXPECT_EQ(gx.data, expect);
}

TEST(MaxPool, UpsampleThenPoolIsIdentity) {
  std::mt19937_64 rng(11);
  for (const Shape& s : {Shape{2, 3, 3, 4}, Shape{1, 2, 2, 3, 2}}) {
    const TD x = random_tensor(s, rng);
    std::vector<std::size_t> arg;
    EXPECT_EQ(maxpool_forward(upsample_forward(x, 2), 2, arg), x);
  }
}

TEST(MaxPool, IndivisibleWindowThrows) {
  std::vector<std::size_t> arg;
  EXPECT_THROW(maxpool_forward(TD({1, 1, 5, 4}), 2, arg), Error);
}

TEST(MaxPool, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (const Shape& s : {Shape{2, 2, 4, 6}, Shape{1, 2, 4, 2, 4}}) {
    ParamSet<double> ps;
    TD x = random_tensor(s, rng);
    MaxPool<double> pool;
    Projection proj;
    auto loss = [&] { return proj(pool.forward(x, Ctx::inference())); };
    auto back = [&] {
      proj(pool.forward(x, Ctx::training()));
      return std::vector<TD>{pool.backward(proj.r)};
    };
    EXPECT_LT(gradient_check(ps, {&x}, loss, back).max_rel_err, 1e-6);
  }
}

TEST(Upsample, BackwardSumsReplicas) {
  const TD x({1, 1, 1, 1}, 2.0);
  const auto y = upsample_forward(x, 2);
  EXPECT_EQ(y.data, Storage<double>(4, 2.0));
  TD gy({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(upsample_backward(x.shape, gy, 2)[0], 10.0);
}

TEST(Upsample, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  ParamSet<double> ps;
  TD x = random_tensor({2, 2, 2, 3, 2}, rng);
  Upsample<double> up;
  Projection proj;
  auto loss = [&] { return proj(up.forward(x, Ctx::inference())); };
  auto back = [&] {
    proj(up.forward(x, Ctx::training()));
    return std::vector<TD>{up.backward(proj.r)};
  };
  EXPECT_LT(gradient_check(ps, {&x}, loss, back).max_rel_err, 1e-6);
}

// ---------------------------------------------------------------- activations

TEST(Activations, FixedPointsAndRanges) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_EQ(std::tanh(0.0), 0.0);
  const TD x({1, 7}, std::vector<double>{-50, -2, -0.5, 0, 0.5, 2, 50});
  const auto r = relu_forward(x), s = sigmoid_forward(x), t = tanh_forward(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(r[i], x[i] >= 0 ? x[i] : 0.0);
    EXPECT_GE(s[i], 0.0);
    EXPECT_LE(s[i], 1.0);
    EXPECT_GE(t[i], -1.0);
    EXPECT_LE(t[i], 1.0);
  }
  EXPECT_EQ(s[3], 0.5);
  EXPECT_EQ(t[3], 0.0);
}

TEST(Activations, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(14);
  TD x = random_tensor({3, 5}, rng, -3, 3);
  const TD r = random_tensor({3, 5}, rng);
  ParamSet<double> ps;
  auto check = [&](auto fwd, auto bwd) {
    auto loss = [&] { return dot(r, fwd(x)); };
    auto back = [&] { return std::vector<TD>{bwd(x, r)}; };
    return gradient_check(ps, {&x}, loss, back).max_rel_err;
  };
  EXPECT_LT(check([](const TD& v) { return sigmoid_forward(v); },
                  [](const TD& v, const TD& g) { return sigmoid_backward(sigmoid_forward(v), g); }),
            1e-8);
  EXPECT_LT(check([](const TD& v) { return tanh_forward(v); },
                  [](const TD& v, const TD& g) { return tanh_backward(tanh_forward(v), g); }),
            1e-8);
  EXPECT_LT(check([](const TD& v) { return relu_forward(v); }, [](const TD& v, const TD& g) { return relu_backward(v, g); }),
            1e-8);
}

TEST(Concat, SplitInvertsConcat) {
  std::mt19937_64 rng(15);
  const TD a = random_tensor({2, 3, 2, 2}, rng), b = random_tensor({2, 1, 2, 2}, rng);
  const auto c = concat_channels(a, b);
  EXPECT_EQ(c.shape, Shape({2, 4, 2, 2}));
  const auto [ga, gb] = split_channels(c, 3);
  EXPECT_EQ(ga, a);
  EXPECT_EQ(gb, b);
}

// ---------------------------------------------------------------- dense / batchnorm

TEST(Dense, LinearLayerGradientsAreExact) {
  ParamSet<double> ps;
  InitRng irng(16);
  Dense<double> fc(ps, "fc", 6, 4, irng);
  std::mt19937_64 rng(17);
  TD x = random_tensor({3, 6}, rng);
  Projection proj;
  auto loss = [&] { return proj(fc.forward(x, Ctx::inference())); };
  auto back = [&] {
    ps.zero_grad();
    proj(fc.forward(x, Ctx::training()));
    return std::vector<TD>{fc.backward(proj.r)};
  };
  // Central differences are exact for a linear map; a larger step only cuts rounding noise.
  GradCheckOptions opt;
  opt.step = 1e-2;
  EXPECT_LT(gradient_check(ps, {&x}, loss, back, opt).max_rel_err, 1e-9);
}

TEST(BatchNorm, StandardizedBatchPassesThrough) {
  ParamSet<double> ps;
  BatchNorm<double> bn(ps, "bn", 1);
  // Mean 0, population variance 1.
  const TD x({4, 1, 1, 1}, std::vector<double>{-1, 1, -1, 1});
  const auto y = bn.forward(x, Ctx::training());
  const double scale = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i] * scale, 1e-15);
  EXPECT_NEAR(y[0], x[0], 1e-5);
}

TEST(BatchNorm, BetaShiftsBatchMean) {
  ParamSet<double> ps;
  BatchNorm<double> bn(ps, "bn", 2);
  std::mt19937_64 rng(18);
  const TD x = random_tensor({3, 2, 2, 2}, rng);
  const auto y0 = bn.forward(x, Ctx::training());
  bn.beta().value = TD({2}, std::vector<double>{0.75, -2.0});
  const auto y1 = bn.forward(x, Ctx::training());
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 2; ++c)
      for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t i = (static_cast<std::size_t>(n) * 2 + c) * 4 + s;
        EXPECT_NEAR(y1[i] - y0[i], c == 0 ? 0.75 : -2.0, 1e-14);
      }
}

TEST(BatchNorm, RunningStatisticsAndEvalMode) {
  ParamSet<double> ps;
  BatchNorm<double> bn(ps, "bn", 1);
  const TD x({2, 1, 1, 2}, std::vector<double>{1, 2, 3, 6});
  bn.forward(x, Ctx::training());
  // batch mean 3, biased var 3.5, unbiased 14/3
  EXPECT_NEAR(bn.running_mean().value[0], 0.1 * 3.0, 1e-15);
  EXPECT_NEAR(bn.running_var().value[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-15);
  const auto y = bn.forward(TD({1, 1, 1, 1}, 1.0), Ctx::inference());
  EXPECT_NEAR(y[0], (1.0 - 0.3) / std::sqrt(0.9 + 1.4 / 3.0 + 1e-5), 1e-14);
}

TEST(BatchNorm, SingleSampleTrainBatchThrows) {
  ParamSet<double> ps;
  BatchNorm<double> bn(ps, "bn", 2);
  try {
    bn.forward(TD({1, 2, 3, 3}), Ctx::training());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateBatch);
  }
  EXPECT_NO_THROW(bn.forward(TD({1, 2, 3, 3}), Ctx::inference()));
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  for (bool train : {true, false}) {
    ParamSet<double> ps;
    BatchNorm<double> bn(ps, "bn", 3);
    std::mt19937_64 rng(19);
    bn.gamma().value = random_tensor({3}, rng, 0.5, 1.5);
    bn.beta().value = random_tensor({3}, rng);
    bn.running_mean().value = random_tensor({3}, rng);
    bn.running_var().value = random_tensor({3}, rng, 0.5, 2.0);
    TD x = random_tensor({4, 3, 2, 3}, rng);
    const Ctx ctx{train, true};
    const Ctx plain{train, false};
    Projection proj;
    auto loss = [&] { return proj(bn.forward(x, plain)); };
    auto back = [&] {
      ps.zero_grad();
      proj(bn.forward(x, ctx));
      return std::vector<TD>{bn.backward(proj.r)};
    };
    // Train-mode calls update running stats, which the train-mode output ignores.
    const auto rep = gradient_check(ps, {&x}, loss, back);
    EXPECT_LT(rep.max_rel_err, 1e-6) << rep.worst;
  }
}

// ---------------------------------------------------------------- LSTM

TEST(Lstm, ZeroParametersGiveZeroState) {
  ParamSet<double> ps;
  InitRng irng(20);
  LstmCell<double> cell(ps, "l", 3, 4, irng);
  for (auto& [n, p] : ps) p.value.fill(0.0);
  std::mt19937_64 rng(21);
  const auto [h, c] = cell.forward(random_tensor({2, 3}, rng), TD({2, 4}), TD({2, 4}), Ctx::inference());
  for (double v : h.data) EXPECT_EQ(v, 0.0);
  for (double v : c.data) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, SaturatedForgetGateKeepsCell) {
  ParamSet<double> ps;
  InitRng irng(22);
  const int H = 3;
  LstmCell<double> cell(ps, "l", 2, H, irng);
  for (auto& [n, p] : ps) p.value.fill(0.0);
  // Forget bias +20, input gate bias -20 so nothing new is written.
  for (int j = 0; j < H; ++j) {
    cell.bias().value[static_cast<std::size_t>(H + j)] = 20.0;
    cell.bias().value[static_cast<std::size_t>(j)] = -20.0;
  }
  std::mt19937_64 rng(23);
  const TD c_prev = random_tensor({2, H}, rng);
  const auto [h, c] = cell.forward(random_tensor({2, 2}, rng), random_tensor({2, H}, rng), c_prev, Ctx::inference());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], c_prev[i], 1e-8);
}

TEST(Lstm, SingleStepClosedForm) {
  ParamSet<double> ps;
  InitRng irng(24);
  LstmCell<double> cell(ps, "l", 1, 1, irng);
  cell.wx().value = TD({4, 1}, std::vector<double>{0.5, -0.25, 1.0, 2.0});
  cell.wh().value = TD({4, 1}, std::vector<double>{0.1, 0.2, -0.3, 0.4});
  cell.bias().value = TD({4}, std::vector<double>{0.0, 1.0, 0.0, -1.0});
  const double x = 0.8, hp = -0.5, cp = 0.3;
  const auto [h, c] = cell.forward(TD({1, 1}, x), TD({1, 1}, hp), TD({1, 1}, cp), Ctx::inference());
  auto sg = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double i = sg(0.5 * x + 0.1 * hp), f = sg(-0.25 * x + 0.2 * hp + 1.0), g = std::tanh(x - 0.3 * hp),
               o = sg(2.0 * x + 0.4 * hp - 1.0);
  const double ce = f * cp + i * g;
  EXPECT_NEAR(c[0], ce, 1e-15);
  EXPECT_NEAR(h[0], o * std::tanh(ce), 1e-15);
}

TEST(Lstm, UnrolledGradientsMatchFiniteDifferences) {
  ParamSet<double> ps;
  InitRng irng(25);
  const int N = 2, I = 3, H = 4, steps = 4;
  LstmCell<double> cell(ps, "l", I, H, irng);
  std::mt19937_64 rng(26);
  std::vector<TD> xs;
  for (int t = 0; t < steps; ++t) xs.push_back(random_tensor({N, I}, rng));
  TD h0 = random_tensor({N, H}, rng), c0 = random_tensor({N, H}, rng);
  std::vector<TD> rh, rc;
  for (int t = 0; t < steps; ++t) {
    rh.push_back(random_tensor({N, H}, rng));
    rc.push_back(random_tensor({N, H}, rng));
  }
  auto run = [&](const Ctx& ctx) {
    TD h = h0, c = c0;
    double l = 0.0;
    for (int t = 0; t < steps; ++t) {
      std::tie(h, c) = cell.forward(xs[static_cast<std::size_t>(t)], h, c, ctx);
      l += dot(rh[static_cast<std::size_t>(t)], h) + dot(rc[static_cast<std::size_t>(t)], c);
    }
    return l;
  };
  auto loss = [&] { return run(Ctx::inference()); };
  auto back = [&] {
    ps.zero_grad();
    run(Ctx::training());
    TD dh({N, H}), dc({N, H});
    std::vector<TD> gx(static_cast<std::size_t>(steps));
    for (int t = steps - 1; t >= 0; --t) {
      dh += rh[static_cast<std::size_t>(t)];
      dc += rc[static_cast<std::size_t>(t)];
      auto g = cell.backward(dh, dc);
      gx[static_cast<std::size_t>(t)] = g.dx;
      dh = g.dh_prev;
      dc = g.dc_prev;
    }
    gx.push_back(dh);
    gx.push_back(dc);
    return gx;
  };
  std::vector<TD*> inputs;
  for (auto& x : xs) inputs.push_back(&x);
  inputs.push_back(&h0);
  inputs.push_back(&c0);
  const auto rep = gradient_check(ps, inputs, loss, back);
  EXPECT_LT(rep.max_rel_err, 1e-5) << rep.worst;
}

// ---------------------------------------------------------------- SE

TEST(SEGate, ZeroSecondLayerHalvesInput) {
  ParamSet<double> ps;
  InitRng irng(27);
  SEGate<double> se(ps, "se", 4, 2, irng);
  se.fc2().weight().value.fill(0.0);
  se.fc2().bias().value.fill(0.0);
  std::mt19937_64 rng(28);
  const TD x = random_tensor({2, 4, 3, 3}, rng);
  const auto y = se.forward(x, Ctx::inference());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i] / 2);
}

TEST(SEGate, SaturatedScaleIsIdentity) {
  ParamSet<double> ps;
  InitRng irng(29);
  SEGate<double> se(ps, "se", 4, 4, irng);
  se.fc2().weight().value.fill(0.0);
  se.fc2().bias().value.fill(20.0);
  std::mt19937_64 rng(30);
  const TD x = random_tensor({1, 4, 2, 2, 2}, rng);
  const auto y = se.forward(x, Ctx::inference());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-8);
}

TEST(SEGate, IndivisibleReductionThrows) {
  ParamSet<double> ps;
  InitRng irng(31);
  EXPECT_THROW(SEGate<double>(ps, "se", 6, 4, irng), Error);
}

TEST(SEGate, GradientsMatchFiniteDifferences) {
  ParamSet<double> ps;
  InitRng irng(32);
  SEGate<double> se(ps, "se", 4, 2, irng);
  std::mt19937_64 rng(33);
  TD x = random_tensor({2, 4, 3, 3}, rng);
  Projection proj;
  auto loss = [&] { return proj(se.forward(x, Ctx::inference())); };
  auto back = [&] {
    ps.zero_grad();
    proj(se.forward(x, Ctx::training()));
    return std::vector<TD>{se.backward(proj.r)};
  };
  const auto rep = gradient_check(ps, {&x}, loss, back);
  EXPECT_LT(rep.max_rel_err, 1e-6) << rep.worst;
}

// ---------------------------------------------------------------- losses

TEST(Losses, IdenticalInputsGiveZero) {
  std::mt19937_64 rng(34);
  const TD p = random_tensor({2, 1, 3, 3}, rng, 0, 1);
  EXPECT_EQ(mse(p, p).value, 0.0);
  EXPECT_EQ(mae(p, p).value, 0.0);
  EXPECT_EQ(vf_mse(p, p).value, 0.0);
}

TEST(Losses, HalfPredictionBceIsLn2) {
  TD p({1, 6}, 0.5), t({1, 6}, std::vector<double>{0, 1, 1, 0, 0, 1});
  EXPECT_NEAR(bce(p, t).value, std::log(2.0), 1e-15);
}

TEST(Losses, MatchSummationOracles) {
  std::mt19937_64 rng(35);
  const TD p = random_tensor({3, 1, 4, 4}, rng, 0.01, 0.99), t = random_tensor({3, 1, 4, 4}, rng, 0, 1);
  double s2 = 0, s1 = 0, sb = 0, vf = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    s2 += (p[i] - t[i]) * (p[i] - t[i]);
    s1 += std::abs(p[i] - t[i]);
    sb += -(t[i] * std::log(p[i]) + (1 - t[i]) * std::log(1 - p[i]));
  }
  for (int b = 0; b < 3; ++b) {
    double mp = 0, mt = 0;
    for (std::size_t i = 0; i < 16; ++i) {
      mp += p[static_cast<std::size_t>(b) * 16 + i];
      mt += t[static_cast<std::size_t>(b) * 16 + i];
    }
    vf += (mp / 16 - mt / 16) * (mp / 16 - mt / 16);
  }
  const double n = static_cast<double>(p.size());
  EXPECT_NEAR(mse(p, t).value, s2 / n, 1e-12);
  EXPECT_NEAR(mae(p, t).value, s1 / n, 1e-12);
  EXPECT_NEAR(bce(p, t).value, sb / n, 1e-12);
  EXPECT_NEAR(vf_mse(p, t).value, vf / 3, 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(36);
  TD p = random_tensor({2, 1, 3, 3}, rng, 0.05, 0.95);
  const TD t = random_tensor({2, 1, 3, 3}, rng, 0, 1);
  ParamSet<double> ps;
  using Fn = LossResult<double> (*)(const TD&, const TD&);
  for (Fn f : {Fn(&mse<double>), Fn(&mae<double>), Fn(&bce<double>), Fn(&vf_mse<double>)}) {
    auto loss = [&] { return f(p, t).value; };
    auto back = [&] { return std::vector<TD>{f(p, t).grad}; };
    EXPECT_LT(gradient_check(ps, {&p}, loss, back).max_rel_err, 1e-6);
  }
}

TEST(Losses, BceClampsExtremes) {
  const TD p({1, 2}, std::vector<double>{0.0, 1.0}), t({1, 2}, std::vector<double>{1.0, 0.0});
  const auto r = bce(p, t);
  EXPECT_NEAR(r.value, -std::log(1e-7), 1e-6);
  EXPECT_TRUE(std::isfinite(bce_alt_form(p, t)));
}

TEST(Losses, ShapeMismatchThrows) {
  EXPECT_THROW(mse(TD({1, 4}), TD({1, 5})), Error);
  EXPECT_THROW(bce(TD({2, 2}), TD({4, 1})), Error);
}

// ---------------------------------------------------------------- Adam

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamSet<double> ps;
  auto& p = ps.add("w", {3});
  p.value = TD({3}, std::vector<double>{1, -2, 3});
  adam_step(ps, {});
  EXPECT_EQ(p.value.data, Storage<double>({1, -2, 3}));
  EXPECT_EQ(p.m.data, Storage<double>(3, 0.0));
  EXPECT_EQ(p.v.data, Storage<double>(3, 0.0));
  EXPECT_EQ(ps.step, 1);
}

TEST(Adam, ZeroGradientDecaysMoments) {
  ParamSet<double> ps;
  auto& p = ps.add("w", {1});
  p.m.fill(0.5);
  p.v.fill(0.25);
  adam_step(ps, {});
  EXPECT_DOUBLE_EQ(p.m[0], 0.45);
  EXPECT_DOUBLE_EQ(p.v[0], 0.25 * 0.999);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {1e-3, 0.37, -5.0, 123.0}) {
    ParamSet<double> ps;
    auto& p = ps.add("w", {1});
    p.grad[0] = g;
    adam_step(ps, {});
    EXPECT_NEAR(std::abs(p.value[0]), 1e-3, 1e-3 * 1e-3) << g;
    EXPECT_EQ(p.value[0] < 0, g > 0);
  }
}

TEST(Adam, QuadraticTrajectoryMatchesScalarReference) {
  ParamSet<double> ps;
  auto& p = ps.add("w", {1});
  p.value[0] = 1.0;
  AdamConfig cfg;
  cfg.lr = 0.1;
  double w = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 10; ++t) {
    p.grad[0] = 2.0 * p.value[0];
    adam_step(ps, cfg);
    const double g = 2.0 * w;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.value[0], w, 1e-10) << t;
  }
}

TEST(Adam, BuffersAreNotUpdated) {
  ParamSet<double> ps;
  auto& b = ps.add("buf", {1}, false);
  b.value[0] = 4.0;
  b.grad[0] = 1.0;
  adam_step(ps, {});
  EXPECT_EQ(b.value[0], 4.0);
  EXPECT_EQ(ps.count(), 0u);
  EXPECT_EQ(ps.count(false), 1u);
}

// ---------------------------------------------------------------- gradient_check

TEST(GradientCheck, TwoLayerConvNet) {
  ParamSet<double> ps;
  InitRng irng(37);
  Conv<double> c1(ps, "c1", 2, 2, 4, 3, irng), c2(ps, "c2", 2, 4, 1, 3, irng);
  Sigmoid<double> act;
  std::mt19937_64 rng(38);
  TD x = random_tensor({2, 2, 5, 5}, rng);
  Projection proj;
  auto fwd = [&](const Ctx& ctx) { return c2.forward(act.forward(c1.forward(x, ctx), ctx), ctx); };
  auto loss = [&] { return proj(fwd(Ctx::inference())); };
  auto back = [&] {
    ps.zero_grad();
    proj(fwd(Ctx::training()));
    return std::vector<TD>{c1.backward(act.backward(c2.backward(proj.r)))};
  };
  EXPECT_LT(gradient_check(ps, {&x}, loss, back).max_rel_err, 1e-6);
}

TEST(GradientCheck, DetectsWrongGradient) {
  ParamSet<double> ps;
  auto& w = ps.add("w", {2});
  w.value = TD({2}, std::vector<double>{1.0, 2.0});
  auto loss = [&] { return w.value[0] * w.value[0] + w.value[1]; };
  auto back = [&] {
    w.grad = TD({2}, std::vector<double>{2.0 * w.value[0], 3.0});  // second entry wrong
    return std::vector<TD>{};
  };
  const auto rep = gradient_check(ps, {}, loss, back);
  EXPECT_GT(rep.max_rel_err, 0.4);
  EXPECT_EQ(rep.worst, "w[1]");
}

TEST(Layers, BackwardWithoutForwardThrows) {
  ParamSet<double> ps;
  InitRng irng(39);
  Conv<double> c(ps, "c", 2, 1, 1, 3, irng);
  EXPECT_THROW(c.backward(TD({1, 1, 3, 3})), Error);
}

TEST(Layers, ForwardIsDeterministic) {
  ParamSet<float> ps;
  InitRng irng(40);
  Conv<float> c(ps, "c", 2, 3, 5, 3, irng);
  Tensor<float> x({2, 3, 8, 8});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(std::sin(double(i)));
  EXPECT_EQ(c.forward(x, Ctx::inference()), c.forward(x, Ctx::inference()));
}
