#include <gtest/gtest.h>

#include <cmath>

#include "ssal/ndgrad.hpp"
#include "test_util.hpp"

namespace ssal {
namespace {

using namespace ssal::testing;
using namespace ssal::ndgrad;

// Scalar-loop cross-correlation, written without the im2col machinery.
Tensor conv_oracle(const Tensor& x, const Tensor& w, Conv3dSpec s) {
  const auto N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const auto O = w.dim(0), KT = w.dim(2), KH = w.dim(3), KW = w.dim(4);
  const auto OT = (T + 2 * s.pad[0] - KT) / s.stride[0] + 1;
  const auto OH = (H + 2 * s.pad[1] - KH) / s.stride[1] + 1;
  const auto OW = (W + 2 * s.pad[2] - KW) / s.stride[2] + 1;
  Tensor out({N, O, OT, OH, OW});
  auto xi = [&](std::size_t n, std::size_t c, long t, long h, long ww) -> double {
    if (t < 0 || h < 0 || ww < 0 || t >= long(T) || h >= long(H) || ww >= long(W)) return 0.0;
    return x[(((n * C + c) * T + t) * H + h) * W + ww];
  };
  std::size_t o = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < O; ++co)
      for (std::size_t ot = 0; ot < OT; ++ot)
        for (std::size_t oh = 0; oh < OH; ++oh)
          for (std::size_t ow = 0; ow < OW; ++ow, ++o) {
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t kt = 0; kt < KT; ++kt)
                for (std::size_t kh = 0; kh < KH; ++kh)
                  for (std::size_t kw = 0; kw < KW; ++kw) {
                    acc += w[(((co * C + c) * KT + kt) * KH + kh) * KW + kw] *
                           xi(n, c, long(ot * s.stride[0] + kt) - long(s.pad[0]),
                              long(oh * s.stride[1] + kh) - long(s.pad[1]),
                              long(ow * s.stride[2] + kw) - long(s.pad[2]));
                  }
            out[o] = acc;
          }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 2) return v.empty() ? 0.0 : v.size() == 1 ? v[0] : v[0] + v[1];
  const auto h = v.size() / 2;
  return pairwise_sum(v.subspan(0, h)) + pairwise_sum(v.subspan(h));
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_EQ(Tensor({2, 3}).size(), 6u);
  EXPECT_THROW(Tensor({2, 2}).item(), DimensionError);
}

TEST(Conv3d, IdentityKernelIsExact) {
  Rng rng(5);
  const Tensor x = random_tensor({2, 1, 3, 5, 4}, rng);
  Tape tape;
  const Var y = conv3d(tape.leaf(x), tape.leaf(Tensor({1, 1, 1, 1, 1}, 1.0)));
  EXPECT_EQ(y.value().reshaped(x.shape()), x);
}

TEST(Conv3d, ZeroKernelGivesZeros) {
  Rng rng(6);
  const Tensor out = conv3d_forward(random_tensor({1, 2, 3, 4, 4}, rng), Tensor({3, 2, 3, 3, 3}), {{1, 1, 1}, {1, 1, 1}});
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv3d, SpatialKernelMatchesLoopOracle) {
  Rng rng(7);
  const Tensor x = random_tensor({1, 1, 2, 4, 4}, rng);
  const Tensor w = random_tensor({1, 1, 1, 3, 3}, rng);
  const Conv3dSpec s{{1, 1, 1}, {0, 1, 1}};
  EXPECT_LT(max_abs_diff(conv3d_forward(x, w, s), conv_oracle(x, w, s)), 1e-12);
}

TEST(Conv3d, BothKernelPathsMatchOracle) {
  // Few output channels with unit stride take the direct loops; the rest go
  // through im2col + GEMM.
  const std::vector<std::pair<std::size_t, Conv3dSpec>> cases = {
      {1, {{1, 1, 1}, {1, 1, 1}}},
      {2, {{2, 1, 1}, {0, 1, 0}}},
      {5, {{1, 2, 2}, {1, 1, 1}}},
      {8, {{2, 2, 2}, {1, 1, 1}}},
      {3, {{1, 1, 1}, {0, 0, 0}}},
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    Rng rng(mix_seed(8, i));
    const auto [co, spec] = cases[i];
    const Tensor x = random_tensor({2, 3, 5, 7, 6}, rng);
    const Tensor w = random_tensor({co, 3, 3, 3, 3}, rng);
    EXPECT_LT(max_abs_diff(conv3d_forward(x, w, spec), conv_oracle(x, w, spec)), 1e-12) << "case " << i;
  }
}

TEST(Conv3d, ChannelMismatchNamesAxes) {
  try {
    conv3d_forward(Tensor({1, 2, 3, 3, 3}), Tensor({1, 3, 1, 1, 1}), {});
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
  EXPECT_THROW(conv3d_forward(Tensor({1, 1, 2, 2, 2}), Tensor({1, 1, 3, 3, 3}), {}), DimensionError);
  EXPECT_THROW(conv3d_forward(Tensor({1, 1, 2, 2}), Tensor({1, 1, 1, 1, 1}), {}), DimensionError);
}

TEST(Activation, ScalarValues) {
  Tape tape;
  const Var x = tape.leaf(Tensor({5}, std::vector<double>{-5, -1, 0, 1, 5}));
  const Tensor s = activation(x, Activation::sigmoid).value();
  const Tensor r = activation(x, Activation::relu).value();
  for (std::size_t i = 0; i < 5; ++i) {
    const long double xv = x.value()[i];
    const long double ref = 1.0L / (1.0L + std::exp(-xv));
    EXPECT_NEAR(s[i], static_cast<double>(ref), 1e-12);
    EXPECT_GT(s[i], 0.0);
    EXPECT_LT(s[i], 1.0);
    EXPECT_EQ(r[i], std::max(0.0, x.value()[i]));
  }
  EXPECT_EQ(s[2], 0.5);
  EXPECT_EQ(r[0], 0.0);
}

TEST(Activation, SigmoidStaysInsideOpenInterval) {
  Tape tape;
  const Tensor s = sigmoid(tape.leaf(Tensor({2}, std::vector<double>{-800, 800}))).value();
  EXPECT_GT(s[0], 0.0);
  EXPECT_LT(s[1], 1.0);
}

TEST(Reduce, Basics) {
  Tape tape;
  EXPECT_EQ(sum(tape.leaf(Tensor::ones({2, 3}))).value().item(), 6.0);
  EXPECT_DOUBLE_EQ(mean(tape.leaf(Tensor({3, 4}, 2.75))).value().item(), 2.75);
  const Tensor rows = reduce(tape.leaf(Tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6})), Reduction::sum, {1}).value();
  EXPECT_EQ(rows, Tensor({2}, std::vector<double>{6, 15}));
  const Tensor cols = reduce(tape.leaf(Tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6})), Reduction::mean, {0}).value();
  EXPECT_EQ(cols, Tensor({3}, std::vector<double>{2.5, 3.5, 4.5}));
}

TEST(Reduce, SumMatchesPairwiseOracle) {
  Rng rng(9);
  const Tensor x = random_tensor({4, 4}, rng, -10, 10);
  Tape tape;
  EXPECT_NEAR(sum(tape.leaf(x)).value().item(), pairwise_sum(x.data()), 1e-12);
}

TEST(Reduce, Errors) {
  Tape tape;
  EXPECT_THROW(reduce(tape.leaf(Tensor({2, 0, 3})), Reduction::sum, {1}), DimensionError);
  EXPECT_THROW(reduce(tape.leaf(Tensor({2, 3})), Reduction::sum, {2}), DimensionError);
}

TEST(BceLoss, AnalyticCases) {
  Tape tape;
  EXPECT_NEAR(bce_loss(tape.leaf(Tensor({4}, 0.5)), Tensor({4}, 0.5)).value().item(), std::log(2.0), 1e-15);
  const Tensor t({4}, std::vector<double>{0, 1, 1, 0});
  EXPECT_LE(bce_loss(tape.leaf(t), t).value().item(), -std::log(1.0 - kProbEps) + 1e-18);
  EXPECT_THROW(bce_loss(tape.leaf(Tensor({3})), Tensor({4})), DimensionError);
}

TEST(BceLoss, MatchesScalarLoopAndIsSymmetric) {
  Rng rng(10);
  const Tensor p = random_tensor({8}, rng, 0.01, 0.99);
  const Tensor t = random_tensor({8}, rng, 0.0, 1.0);
  double ref = 0.0;
  for (std::size_t i = 0; i < 8; ++i) ref -= t[i] * std::log(p[i]) + (1 - t[i]) * std::log(1 - p[i]);
  ref /= 8.0;
  Tape tape;
  const double got = bce_loss(tape.leaf(p), t).value().item();
  EXPECT_NEAR(got, ref, 1e-12);
  EXPECT_GE(got, 0.0);
  Tensor p1(p.shape()), t1(t.shape());
  for (std::size_t i = 0; i < 8; ++i) {
    p1[i] = 1 - p[i];
    t1[i] = 1 - t[i];
  }
  EXPECT_NEAR(bce_loss(tape.leaf(p1), t1).value().item(), got, 1e-12);
}

TEST(MarginLoss, AnalyticCases) {
  Tape tape;
  const Tensor labels({2, 3}, std::vector<double>{1, 0, 0, 0, 0, 1});
  EXPECT_EQ(margin_loss(tape.leaf(Tensor({2, 3}, std::vector<double>{0.9, 0.1, 0.1, 0.1, 0.1, 0.9})), labels).value().item(), 0.0);
  EXPECT_NEAR(margin_loss(tape.leaf(Tensor({1, 2})), Tensor({1, 2}, std::vector<double>{1, 0})).value().item(), 0.81, 1e-15);
  EXPECT_THROW(margin_loss(tape.leaf(Tensor({1, 2})), Tensor({1, 2}, std::vector<double>{1, 1})), std::invalid_argument);
  EXPECT_THROW(margin_loss(tape.leaf(Tensor({1, 2})), Tensor({1, 2}, std::vector<double>{0.5, 0.5})), std::invalid_argument);
}

TEST(MarginLoss, MatchesScalarLoop) {
  Rng rng(11);
  const Tensor s = random_tensor({3, 4}, rng, 0.0, 1.0);
  Tensor labels({3, 4});
  for (std::size_t r = 0; r < 3; ++r) labels[r * 4 + static_cast<std::size_t>(uniform_int(rng, 0, 3))] = 1.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < 12; ++i) {
    const double pos = std::max(0.0, 0.9 - s[i]), neg = std::max(0.0, s[i] - 0.1);
    ref += labels[i] == 1.0 ? pos * pos : 0.5 * neg * neg;
  }
  Tape tape;
  const double got = margin_loss(tape.leaf(s), labels).value().item();
  EXPECT_NEAR(got, ref / 3.0, 1e-12);
  EXPECT_GE(got, 0.0);
}

TEST(Backprop, SumGivesOnes) {
  Tape tape;
  const Var x = tape.leaf(Tensor({2, 3, 4}, 0.3));
  tape.backward(sum(x));
  for (double g : tape.grad(x).data()) EXPECT_EQ(g, 1.0);
}

TEST(Backprop, ZeroTimesFunctionGivesZeros) {
  Rng rng(12);
  Tape tape;
  const Var x = tape.leaf(random_tensor({3, 3}, rng));
  tape.backward(scale(sum(sigmoid(mul(x, x))), 0.0));
  for (double g : tape.grad(x).data()) EXPECT_EQ(g, 0.0);
}

TEST(Backprop, NonScalarLossRejected) {
  Tape tape;
  const Var x = tape.leaf(Tensor({2}));
  EXPECT_THROW(tape.backward(relu(x)), DimensionError);
}

TEST(Backprop, NonParticipatingParameterGetsZeros) {
  ParamStore ps;
  ps.add("used", Tensor({2}, 1.0));
  ps.add("idle", Tensor({3}, 1.0));
  Tape tape;
  auto v = ps.bind(tape);
  const ParamStore g = backprop(tape, sum(mul(v.at("used"), v.at("used"))), ps);
  EXPECT_EQ(g.at("used"), Tensor({2}, 2.0));
  EXPECT_EQ(g.at("idle"), Tensor({3}, 0.0));
}

TEST(Tape, BackwardVisitsEachOpOnceInReverse) {
  Tape tape;
  const Var x = tape.leaf(Tensor({3}, 0.5));
  const Var a = sigmoid(x);
  const Var b = mul(a, a);
  const Var c = add(b, a);
  const Var loss = sum(c);
  const auto order = tape.backward(loss);
  EXPECT_EQ(order, (std::vector<std::size_t>{loss.id, c.id, b.id, a.id}));
}

TEST(Tape, NonFiniteOutputRaises) {
  Tape tape;
  const Var x = tape.leaf(Tensor({1}, 1e300));
  EXPECT_THROW(mul(x, x), NumericError);
}

TEST(Adam, ZeroGradientLeavesParametersAlone) {
  ParamStore p;
  p.add("w", Tensor({3}, std::vector<double>{1, -2, 3}));
  const ParamStore before = p;
  Adam opt(p, {});
  opt.step(p, p.zeros_like(StoreRole::gradient));
  EXPECT_EQ(p, before);
  EXPECT_EQ(opt.first_moment().at("w"), Tensor({3}));
  EXPECT_EQ(opt.second_moment().at("w"), Tensor({3}));
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, MatchesScalarReference) {
  const double lr = 1e-4, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double x = 0.7, m = 0, v = 0;
  ParamStore p;
  p.add("x", Tensor::scalar(x));
  Adam opt(p, {lr, b1, b2, eps});
  const std::vector<double> gs = {1.0, -0.5, 2.0, 0.25};
  for (std::size_t k = 1; k <= gs.size(); ++k) {
    const double g = gs[k - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, double(k))), vh = v / (1 - std::pow(b2, double(k)));
    x -= lr * mh / (std::sqrt(vh) + eps);
    ParamStore grad = p.zeros_like(StoreRole::gradient);
    grad.at("x")[0] = g;
    opt.step(p, grad);
    EXPECT_NEAR(p.at("x")[0], x, 1e-12) << "step " << k;
  }
  // One step with g = 1 moves the parameter by almost exactly lr.
  ParamStore q;
  q.add("x", Tensor::scalar(0.0));
  Adam one(q, {lr, b1, b2, eps});
  ParamStore g1 = q.zeros_like(StoreRole::gradient);
  g1.at("x")[0] = 1.0;
  one.step(q, g1);
  EXPECT_NEAR(q.at("x")[0], -lr / (1 + eps), 1e-12);
}

TEST(Adam, MismatchedNamesRejected) {
  ParamStore p, g;
  p.add("a", Tensor({1}));
  g.add("b", Tensor({1}));
  Adam opt(p, {});
  EXPECT_THROW(opt.step(p, g), std::invalid_argument);
}

// A tiny conv net trained twice from one seed: identical bits, and the loss
// falls well below its starting value.
ParamStore fit(std::uint64_t seed, std::vector<double>* losses) {
  Rng rng(seed);
  ParamStore p;
  p.add("w", random_tensor({1, 1, 3, 3, 3}, rng, -0.3, 0.3));
  p.add("b", Tensor({1}));
  const Tensor x = random_tensor({2, 1, 4, 6, 6}, rng);
  Tensor target(Shape{2, 1, 4, 6, 6});
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = x[i] > 0.2 ? 1.0 : 0.0;
  Adam opt(p, {0.05});
  for (int it = 0; it < 150; ++it) {
    Tape tape;
    auto v = p.bind(tape);
    const Var y = sigmoid(add_channel_bias(conv3d(tape.constant(x), v.at("w"), {{1, 1, 1}, {1, 1, 1}}), v.at("b")));
    const Var loss = bce_loss(y, target);
    losses->push_back(loss.value().item());
    opt.step(p, backprop(tape, loss, p));
  }
  return p;
}

TEST(Determinism, TrainingIsBitwiseReproducible) {
  std::vector<double> la, lb;
  const ParamStore a = fit(3, &la), b = fit(3, &lb);
  EXPECT_EQ(a, b);
  EXPECT_EQ(la, lb);
  EXPECT_LT(la.back(), 0.5 * la.front());
}

TEST(ParamStore, AlignmentChecks) {
  ParamStore a, b;
  a.add("x", Tensor({2}));
  b.add("x", Tensor({3}));
  EXPECT_THROW(a.require_aligned(b, "t"), DimensionError);
  EXPECT_THROW(a.add("x", Tensor({1})), std::invalid_argument);
  EXPECT_EQ(a.zeros_like(StoreRole::teacher).role(), StoreRole::teacher);
}

}  // namespace
}  // namespace ssal
