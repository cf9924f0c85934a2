// Copyright 2026 The Weavenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "weavenet/tensor.hpp"

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "gradcheck.hpp"

namespace weavenet {
namespace {

Tensor randn(Shape shape, Rng& rng, double scale = 1.0, bool grad = true) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

TEST(Tensor, ShapeChecks) {
  EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2);
  EXPECT_EQ(t.cols(), 3);
  EXPECT_THROW(t.item(), ShapeError);
  Tensor a = Tensor::zeros({2, 2});
  EXPECT_THROW(add(a, t), ShapeError);
}

TEST(Dense, IdentityAndArithmetic) {
  // W = identity, b = 0 -> output equals input.
  Tensor x = Tensor::from({2, 2}, {1.5, -2.0, 0.25, 3.0});
  Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::zeros({2});
  Tensor y = dense(x, w, b);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.values()[i], x.values()[i]);

  // x=[1,2], W=[[1],[1]], b=[0.5] -> [3.5].
  Tensor x2 = Tensor::from({1, 2}, {1, 2});
  Tensor w2 = Tensor::from({2, 1}, {1, 1});
  Tensor b2 = Tensor::from({1}, {0.5});
  EXPECT_DOUBLE_EQ(dense(x2, w2, b2).item(), 3.5);

  Tensor w_bad = Tensor::from({3, 1}, {1, 1, 1});
  EXPECT_THROW(dense(x2, w_bad, b2), ShapeError);
}

TEST(Dense, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  Tensor x = randn({3, 4}, rng);
  Tensor w = randn({4, 5}, rng);
  Tensor b = randn({5}, rng);
  auto fn = [&] { return sum(dense(x, w, b)); };
  auto res = gradcheck::check(fn, {x, w, b});
  EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(Relu, ValuesAndSubgradient) {
  Tensor x = Tensor::from({3}, {2.0, -1.0, 0.0}, true);
  Tensor y = relu(x);
  EXPECT_DOUBLE_EQ(y.values()[0], 2.0);
  EXPECT_DOUBLE_EQ(y.values()[1], 0.0);
  EXPECT_DOUBLE_EQ(y.values()[2], 0.0);
  backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad_ref()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad_ref()[1], 0.0);
  EXPECT_DOUBLE_EQ(x.grad_ref()[2], 0.0);  // chosen subgradient at 0
}

TEST(BatchNorm, ConstantColumnTrainGivesBeta) {
  Tensor x = Tensor::from({4, 1}, {3.0, 3.0, 3.0, 3.0}, true);
  Tensor gamma = Tensor::from({1}, {2.0}, true);
  Tensor beta = Tensor::from({1}, {0.75}, true);
  BatchNormState st;
  Tensor y = batch_norm(x, gamma, beta, {}, st, BnMode::kTrain);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(y.values()[i], 0.75, 1e-12);
}

TEST(BatchNorm, StandardizedInputPassesThrough) {
  // Mean 0, variance 1 input with gamma=1, beta=0 comes out (almost) as is.
  Tensor x = Tensor::from({2, 1}, {1.0, -1.0}, true);
  Tensor gamma = Tensor::from({1}, {1.0}, true);
  Tensor beta = Tensor::zeros({1}, true);
  BatchNormState st;
  Tensor y = batch_norm(x, gamma, beta, {}, st, BnMode::kTrain);
  EXPECT_NEAR(y.values()[0], 1.0, 1e-4);
  EXPECT_NEAR(y.values()[1], -1.0, 1e-4);
}

TEST(BatchNorm, MaskedRowsAreZeroAndIsolated) {
  Rng rng(3);
  Tensor x = randn({5, 3}, rng);
  Tensor gamma = Tensor::from({3}, {1.0, 2.0, 0.5}, true);
  Tensor beta = Tensor::from({3}, {0.1, -0.2, 0.0}, true);
  std::vector<double> mask = {1, 0, 1, 1, 0};
  BatchNormState st;
  Tensor y = batch_norm(x, gamma, beta, mask, st, BnMode::kTrain);
  for (int c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(y.at(1, c), 0.0);
    EXPECT_DOUBLE_EQ(y.at(4, c), 0.0);
  }

  // Perturbing a masked row changes neither outputs nor parameter gradients.
  Tensor loss = sum(square(y));
  backward(loss);
  auto ggamma = gamma.grad_ref();
  auto y_before = y.values();

  x.values()[1 * 3 + 0] += 100.0;
  BatchNormState st2;
  Tensor y2 = batch_norm(x, gamma, beta, mask, st2, BnMode::kTrain);
  EXPECT_EQ(y2.values(), y_before);
  backward(sum(square(y2)));
  EXPECT_EQ(gamma.grad_ref(), ggamma);
}

TEST(BatchNorm, FewerThanTwoValidRowsSkipsNormalization) {
  Tensor x = Tensor::from({2, 2}, {1.0, 2.0, 9.0, 9.0}, true);
  Tensor gamma = Tensor::from({2}, {3.0, 3.0}, true);
  Tensor beta = Tensor::from({2}, {1.0, 1.0}, true);
  std::vector<double> mask = {1, 0};
  BatchNormState st;
  Tensor y = batch_norm(x, gamma, beta, mask, st, BnMode::kTrain);
  EXPECT_DOUBLE_EQ(y.at(0, 0), 1.0);  // identity pass-through
  EXPECT_DOUBLE_EQ(y.at(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(y.at(1, 0), 0.0);
  EXPECT_EQ(st.skipped_batches, 1);
}

TEST(BatchNorm, InferUsesRunningStatistics) {
  Rng rng(11);
  Tensor gamma = Tensor::from({2}, {1.0, 1.0}, true);
  Tensor beta = Tensor::zeros({2}, true);
  BatchNormState st;
  for (int step = 0; step < 800; ++step) {
    Tensor x = randn({16, 2}, rng, 2.0, false);
    for (auto& v : x.values()) v += 5.0;  // mean 5, sd 2
    batch_norm(x, gamma, beta, {}, st, BnMode::kTrain);
  }
  EXPECT_NEAR(st.running_mean[0], 5.0, 0.3);
  EXPECT_NEAR(st.running_var[0], 4.0, 1.0);
  Tensor probe = Tensor::from({1, 2}, {5.0, 5.0});
  Tensor y = batch_norm(probe, gamma, beta, {}, st, BnMode::kInfer);
  EXPECT_NEAR(y.values()[0], 0.0, 0.2);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  Tensor x = randn({6, 3}, rng);
  Tensor gamma = randn({3}, rng, 0.5);
  Tensor beta = randn({3}, rng, 0.5);
  std::vector<double> mask = {1, 1, 0, 1, 1, 1};
  for (BnMode mode : {BnMode::kTrain, BnMode::kInfer}) {
    BatchNormState st;
    st.init(3);
    auto fn = [&] {
      BatchNormState local = st;  // keep running stats fixed across FD evals
      return sum(square(batch_norm(x, gamma, beta, mask, local, mode)));
    };
    auto res = gradcheck::check(fn, {x, gamma, beta});
    EXPECT_LT(res.max_rel_err, 1e-4) << "mode " << static_cast<int>(mode);
  }
}

TEST(MaskedSum, AllMaskedIsZero) {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor s = masked_sum(x, {0.0, 0.0});
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(s.values()[c], 0.0);
  Tensor s2 = masked_sum(x, {1.0, 1.0});
  EXPECT_DOUBLE_EQ(s2.values()[0], 5.0);
}

TEST(Softmax, UniformAndGradient) {
  Tensor x = Tensor::from({1, 2}, {0.0, 0.0}, true);
  Tensor y = softmax(x);
  EXPECT_DOUBLE_EQ(y.values()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.values()[1], 0.5);

  Rng rng(17);
  Tensor z = randn({4, 3}, rng);
  Tensor p = randn({4, 3}, rng, 1.0, false);
  auto fn = [&] { return sum(mul(softmax(z), p)); };
  auto res = gradcheck::check(fn, {z});
  EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(WeightedCrossEntropy, ZeroWeightSilencesRow) {
  Tensor logits = Tensor::from({2, 2}, {3.0, -1.0, 0.0, 8.0}, true);
  Tensor loss = weighted_cross_entropy(logits, {0, 1}, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(loss.item(), 0.0);
  backward(loss);
  for (double g : logits.grad_ref()) EXPECT_DOUBLE_EQ(g, 0.0);

  // Perfect prediction -> near-zero loss.
  Tensor sharp = Tensor::from({1, 2}, {20.0, -20.0}, true);
  EXPECT_NEAR(weighted_cross_entropy(sharp, {0}, {1.0}).item(), 0.0, 1e-9);
}

TEST(WeightedCrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(23);
  Tensor logits = randn({6, 2}, rng);
  std::vector<int> labels = {0, 1, 1, 0, 1, 0};
  std::vector<double> weights = {1.0, 9.0, 0.0, 2.5, 1.0, 1.0};
  auto fn = [&] { return weighted_cross_entropy(logits, labels, weights); };
  auto res = gradcheck::check(fn, {logits});
  EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(L2Loss, ValueAndGradient) {
  Tensor pred = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  Tensor loss = l2_loss(pred, {0.0, 2.0, 5.0}, {1.0, 1.0, 2.0});
  EXPECT_DOUBLE_EQ(loss.item(), 1.0 + 0.0 + 2.0 * 4.0);
  auto fn = [&] { return l2_loss(pred, {0.0, 2.0, 5.0}, {1.0, 1.0, 2.0}); };
  auto res = gradcheck::check(fn, {pred});
  EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(Backward, RequiresScalarLoss) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(relu(x)), ShapeError);
}

TEST(Backward, SharedParameterGradientsAdd) {
  // loss = sum(w*x1) + sum(w*x2) must give dw = x1 + x2.
  Tensor w = Tensor::from({2}, {0.5, -1.0}, true);
  Tensor x1 = Tensor::from({2}, {1.0, 2.0});
  Tensor x2 = Tensor::from({2}, {10.0, 20.0});
  Tensor loss = add(sum(mul(w, x1)), sum(mul(w, x2)));
  backward(loss);
  EXPECT_DOUBLE_EQ(w.grad_ref()[0], 11.0);
  EXPECT_DOUBLE_EQ(w.grad_ref()[1], 22.0);
}

TEST(Backward, UnreachableParameterKeepsNoGradient) {
  Tensor w = Tensor::from({2}, {1.0, 1.0}, true);
  Tensor u = Tensor::from({2}, {1.0, 1.0}, true);
  backward(sum(mul(w, w)));
  EXPECT_FALSE(u.has_grad());
  // Loss independent of a consumed-but-disconnected parameter gives zero.
  Tensor z = mul_scalar(u, 0.0);
  backward(add(sum(mul(w, w)), sum(z)));
  for (double g : u.grad_ref()) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(Backward, DeterministicGivenFixedGraph) {
  Rng rng(29);
  Tensor x = randn({4, 4}, rng);
  Tensor w = randn({4, 2}, rng);
  Tensor b = randn({2}, rng);
  Tensor loss = sum(square(relu(dense(x, w, b))));
  backward(loss);
  auto g1 = w.grad_ref();
  backward(loss);
  EXPECT_EQ(w.grad_ref(), g1);
}

TEST(SegmentOps, ValuesAndGradients) {
  Rng rng(31);
  Tensor x = randn({5, 2}, rng);
  std::vector<std::int64_t> seg = {0, 0, 1, 2, 1};
  Tensor s = segment_sum(x, seg, 3);
  EXPECT_DOUBLE_EQ(s.at(0, 0), x.at(0, 0) + x.at(1, 0));
  EXPECT_DOUBLE_EQ(s.at(1, 1), x.at(2, 1) + x.at(4, 1));

  std::vector<std::int64_t> idx = {3, 3, 0};
  Tensor proj = randn({3, 2}, rng, 1.0, false);
  auto fn = [&] {
    return sum(mul(gather_rows(segment_sum(x, seg, 5), idx), proj));
  };
  auto res = gradcheck::check(fn, {x});
  EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(ConcatScaleRows, ValuesAndGradients) {
  Rng rng(37);
  Tensor a = randn({3, 2}, rng);
  Tensor b = randn({3, 1}, rng);
  Tensor c = concat<double>({a, b});
  EXPECT_EQ(c.cols(), 3);
  EXPECT_DOUBLE_EQ(c.at(1, 2), b.at(1, 0));
  std::vector<double> scale = {2.0, 0.0, -1.0};
  auto fn = [&] { return sum(square(scale_rows(concat<double>({a, b}), scale))); };
  auto res = gradcheck::check(fn, {a, b});
  EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(ElementwiseOps, RandomizedGradientProperty) {
  // Analytic gradients match central differences across random shapes/seeds.
  Rng rng(41);
  std::uniform_int_distribution<int> rdim(1, 6);
  double worst = 0.0;
  int checked = 0;
  for (int iter = 0; iter < 100; ++iter) {
    std::int64_t r = rdim(rng), c = rdim(rng);
    Tensor x = randn({r, c}, rng);
    // keep away from relu/sqrt kinks
    for (auto& v : x.values()) {
      if (std::abs(v) < 0.05) v = v < 0 ? v - 0.1 : v + 0.1;
    }
    Tensor y = randn({r, c}, rng);
    Tensor p = randn({r, c}, rng, 1.0, false);
    int which = iter % 5;
    auto fn = [&]() -> Tensor {
      switch (which) {
        case 0: return sum(mul(relu(x), p));
        case 1: return sum(mul(sqrt(exp(x)), p));
        case 2: return sum(mul(square(sub(x, y)), p));
        case 3: return sum(mul(add(mul(x, y), y), p));
        default: return mean(mul(x, exp(mul_scalar(y, 0.3))));
      }
    };
    auto res = gradcheck::check(fn, {x, y});
    worst = std::max(worst, res.max_rel_err);
    checked += res.checked;
  }
  EXPECT_GT(checked, 100);
  EXPECT_LT(worst, 1e-4);
}

TEST(Adagrad, FormulaSteps) {
  Parameter p("w", Tensor::from({1}, {1.0}));
  std::vector<Parameter*> params = {&p};

  // First step with g=1, lr=0.003: acc=1, delta = -0.003/(1+eps).
  p.value.grad() = {1.0};
  adagrad_step(params, 0.003);
  EXPECT_NEAR(p.value.values()[0], 1.0 - 0.003, 1e-9);
  EXPECT_DOUBLE_EQ(p.accumulator[0], 1.0);

  // Second step with g=1: acc=2, delta = -0.003/sqrt(2).
  double before = p.value.values()[0];
  p.value.grad() = {1.0};
  adagrad_step(params, 0.003);
  EXPECT_NEAR(before - p.value.values()[0], 0.003 / std::sqrt(2.0), 1e-7);

  // g=0: neither the value nor the accumulator moves.
  before = p.value.values()[0];
  double acc_before = p.accumulator[0];
  p.value.grad() = {0.0};
  adagrad_step(params, 0.003);
  EXPECT_DOUBLE_EQ(p.value.values()[0], before);
  EXPECT_DOUBLE_EQ(p.accumulator[0], acc_before);
}

TEST(Dropout, InvertedScalingAndIdentityWhenDisabled) {
  Rng rng(43);
  Tensor x = Tensor::from({1, 1000}, std::vector<double>(1000, 1.0), true);
  Tensor off = dropout(x, 0.25, rng, false);
  EXPECT_EQ(off.values(), x.values());
  Tensor on = dropout(x, 0.25, rng, true);
  double mean_kept = 0.0;
  int zeros = 0;
  for (double v : on.values()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      EXPECT_NEAR(v, 1.0 / 0.75, 1e-12);
      mean_kept += v;
    }
  }
  EXPECT_NEAR(zeros / 1000.0, 0.25, 0.06);
  EXPECT_NEAR(mean_kept / 1000.0, 1.0, 0.08);
}

TEST(NanCheck, RaisesInCheckedMode) {
  nan_check_enabled() = true;
  Tensor x = Tensor::from({1}, {-1.0});
  EXPECT_THROW(sqrt(x), NumericError);
  nan_check_enabled() = false;
  EXPECT_TRUE(std::isnan(sqrt(x).item()));
}

}  // namespace
}  // namespace weavenet
