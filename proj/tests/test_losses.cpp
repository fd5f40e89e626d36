#include <gtest/gtest.h>

#include "apn/apu.hpp"
#include "apn/errors.hpp"
#include "apn/gradcheck.hpp"
#include "apn/losses.hpp"
#include "apn/numerics.hpp"
#include "apn/ops.hpp"
#include "apn/rng.hpp"
#include "oracles.hpp"

using namespace apn;

namespace {

double value(Var v) { return v.value().item(); }

}  // namespace

TEST(FrameLoss, IdenticalIsZero) {
  Rng rng(1);
  const Tensor y = uniform_tensor({1, 3, 3}, rng, -1, 1);
  Tape t;
  EXPECT_EQ(value(losses::frame_loss(t.constant(y), t.constant(y))), 0.0);
  EXPECT_EQ(value(losses::frame_loss(t.constant(y), t.constant(y), FrameLossKind::mse)), 0.0);
}

TEST(FrameLoss, AllOnesDifference) {
  Tape t;
  EXPECT_DOUBLE_EQ(value(losses::frame_loss(t.constant(Tensor({1, 2, 2}, 1.5)), t.constant(Tensor({1, 2, 2}, 0.5)))), 2.0);
  EXPECT_DOUBLE_EQ(
      value(losses::frame_loss(t.constant(Tensor({1, 2, 2}, 1.5)), t.constant(Tensor({1, 2, 2}, 0.5)), FrameLossKind::mse)),
      1.0);
}

TEST(FrameLoss, MatchesOracle) {
  Rng rng(2);
  const Tensor a = uniform_tensor({1, 4, 5}, rng, -1, 1), b = uniform_tensor({1, 4, 5}, rng, -1, 1);
  Tape t;
  EXPECT_NEAR(value(losses::frame_loss(t.constant(a), t.constant(b))), oracle::frame_l2(a, b), 1e-12);
}

TEST(FrameLoss, ShapeMismatch) {
  Tape t;
  EXPECT_THROW(losses::frame_loss(t.constant(Tensor({1, 2, 2})), t.constant(Tensor({1, 2, 3}))), ShapeMismatch);
}

TEST(Compact, ZeroWhenOnPrototypes) {
  const Tensor p = Tensor::from({{1, 0}, {0, 2}});
  const Tensor x = Tensor::from({{0, 2}, {1, 0}, {1, 0}});
  const Tensor scores = Tensor::from({{0.1, 0.9}, {0.8, 0.2}, {0.6, 0.4}});
  Tape t;
  EXPECT_EQ(value(losses::compact_loss(t.constant(x), t.constant(p), t.constant(scores))), 0.0);
}

TEST(Compact, ThreeFourFive) {
  Tape t;
  EXPECT_DOUBLE_EQ(value(losses::compact_loss(t.constant(Tensor::from({{0, 0}})), t.constant(Tensor::from({{3, 4}})),
                                              t.constant(Tensor::from({{1}})))),
                   5.0);
}

TEST(Compact, MatchesArgmaxOracle) {
  Rng rng(3);
  const Tensor x = uniform_tensor({7, 3}, rng, -1, 1), p = uniform_tensor({4, 3}, rng, -1, 1);
  const Tensor s = uniform_tensor({7, 4}, rng, 0, 1);
  Tape t;
  EXPECT_NEAR(value(losses::compact_loss(t.constant(x), t.constant(p), t.constant(s))), oracle::compact(x, p, s), 1e-12);
}

TEST(Compact, TiesPickLowestIndex) {
  EXPECT_EQ(losses::assignment(Tensor::from({{0.5, 0.5}, {0.2, 0.8}})), (std::vector<std::size_t>{0, 1}));
}

TEST(Compact, EmptyPoolRejected) {
  Tape t;
  EXPECT_THROW(losses::compact_loss(t.constant(Tensor({2, 3})), t.constant(Tensor({0, 3})), t.constant(Tensor({2, 0}))),
               TooFewPrototypes);
}

TEST(Compact, GradientSkipsTheArgmax) {
  // Fixed pairing: x0 -> p1. d/dx0 ||x0 - p1|| = (x0 - p1) / ||x0 - p1||, averaged over N = 1.
  Tape t;
  Var x = t.leaf(Tensor::from({{0, 0}}), true);
  Var p = t.leaf(Tensor::from({{9, 9}, {3, 4}}), true);
  t.backward(losses::compact_loss(x, p, std::vector<std::size_t>{1}));
  EXPECT_DOUBLE_EQ(x.grad()[0], -0.6);
  EXPECT_DOUBLE_EQ(x.grad()[1], -0.8);
  EXPECT_EQ(p.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(p.grad()[2], 0.6);
}

TEST(Diversity, InactiveHingeIsZero) {
  Tape t;
  EXPECT_EQ(value(losses::diversity_loss(t.constant(Tensor::from({{0, 0}, {3, 0}, {0, 3}})), 1.0)), 0.0);
}

TEST(Diversity, CoincidentPairGivesMargin) {
  Tape t;
  EXPECT_EQ(value(losses::diversity_loss(t.constant(Tensor::from({{0.3, 0.1}, {0.3, 0.1}})), 1.0)), 1.0);
}

TEST(Diversity, MixedPairsMatchEnumeration) {
  const Tensor p = Tensor::from({{0, 0}, {0.6, 0}, {2, 0}});  // distances 0.6, 2.0, 1.4
  Tape t;
  EXPECT_NEAR(value(losses::diversity_loss(t.constant(p), 1.0)), 0.4 / 3.0, 1e-15);
  EXPECT_NEAR(value(losses::diversity_loss(t.constant(p), 1.0)), oracle::diversity(p, 1.0), 1e-15);
  EXPECT_NEAR(value(losses::diversity_loss(t.constant(p), 1.5, DiversityKind::squared_hinge)),
              oracle::diversity(p, 1.5, true), 1e-15);
}

TEST(Diversity, TooFewPrototypes) {
  Tape t;
  EXPECT_THROW(losses::diversity_loss(t.constant(Tensor({1, 3})), 1.0), TooFewPrototypes);
}

TEST(Diversity, TranslationAndPermutationInvariant) {
  Rng rng(4);
  const Tensor p = uniform_tensor({4, 3}, rng, -0.5, 0.5);
  Tensor moved = p, swapped({4, 3});
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t k = 0; k < 3; ++k) moved.at(j, k) += 0.7 * (k + 1), swapped.at(j, k) = p.at(3 - j, k);
  Tape t;
  const double base = value(losses::diversity_loss(t.constant(p), 1.0));
  EXPECT_NEAR(value(losses::diversity_loss(t.constant(moved), 1.0)), base, 1e-14);
  EXPECT_NEAR(value(losses::diversity_loss(t.constant(swapped), 1.0)), base, 1e-15);
}

TEST(Diversity, ShrinkingDistanceBelowMarginIncreasesLoss) {
  double last = -1.0;
  for (double d = 1.0; d >= 0.0; d -= 0.1) {
    Tape t;
    const double l = value(losses::diversity_loss(t.constant(Tensor::from({{0, 0}, {d, 0}})), 1.0));
    if (d < 1.0) {
      EXPECT_GT(l, last);
    }
    last = l;
  }
}

TEST(Covariance, ZeroCovariancePair) {
  Tape t;
  Var cov = apu::distinguish(t.constant(Tensor::from({{1, -1, 0, 0}, {0, 0, 1, -1}})));
  EXPECT_EQ(value(losses::covariance_loss(cov)), 0.0);
}

TEST(Covariance, IdenticalPairGivesOne) {
  Tape t;
  Var cov = apu::distinguish(t.constant(Tensor::from({{1, -1}, {1, -1}})));
  EXPECT_DOUBLE_EQ(value(losses::covariance_loss(cov)), 1.0);
}

TEST(Covariance, MatchesFormula) {
  Rng rng(5);
  const Tensor a = uniform_tensor({4, 4}, rng, -1, 1);
  Tensor cov({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) cov.at(i, j) = 0.5 * (a.at(i, j) + a.at(j, i));
  Tape t;
  EXPECT_NEAR(value(losses::covariance_loss(t.constant(cov))), oracle::covariance_abs(cov), 1e-15);
  double fro = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (i != j) fro += cov.at(i, j) * cov.at(i, j);
  EXPECT_NEAR(value(losses::covariance_loss(t.constant(cov), CovarianceKind::frobenius)), std::sqrt(fro), 1e-14);
}

TEST(Covariance, ShiftInvariant) {
  Rng rng(6);
  const Tensor p = uniform_tensor({3, 5}, rng, -1, 1);
  Tensor shifted = p;
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 5; ++k) shifted.at(j, k) += 2.5 * (j + 1);
  Tape t;
  EXPECT_NEAR(value(losses::covariance_loss(apu::distinguish(t.constant(p)))),
              value(losses::covariance_loss(apu::distinguish(t.constant(shifted)))), 1e-14);
}

TEST(Covariance, TooFewPrototypes) {
  Tape t;
  EXPECT_THROW(losses::covariance_loss(t.constant(Tensor({1, 1}))), TooFewPrototypes);
}

TEST(Combine, RecordedSubLosses) {
  const losses::LossBreakdown b = losses::combine(2.0, 0.5, 0.3, 0.1, LossWeights{});
  EXPECT_NEAR(b.feature, 0.504, 1e-12);
  EXPECT_NEAR(b.total, 2.504, 1e-12);
}

TEST(Combine, DecouplingAndZeros) {
  LossWeights w;
  w.lambda1 = 0;
  EXPECT_EQ(losses::combine(1.25, 0.5, 0.3, 0.1, w).total, 1.25);
  EXPECT_EQ(losses::combine(0, 0, 0, 0, LossWeights{}).total, 0.0);
}

TEST(Combine, NegativeWeightRejected) {
  LossWeights w;
  w.lambda2 = -0.1;
  EXPECT_THROW(w.validate(), InvalidConfig);
  w = LossWeights{};
  w.gamma = 0;
  EXPECT_THROW(w.validate(), InvalidConfig);
}

TEST(TotalLoss, BreakdownMatchesParts) {
  Rng rng(7);
  Tape t;
  Var enc = t.constant(uniform_tensor({4, 3, 3}, rng, -1, 1));
  apu::Result r = apu::forward(enc, t.constant(uniform_tensor({3, 4}, rng, -1, 1)));
  Var pred = t.constant(uniform_tensor({1, 4, 4}, rng, -1, 1)), target = t.constant(uniform_tensor({1, 4, 4}, rng, -1, 1));
  LossWeights w;
  w.lambda1 = 0.7;
  w.lambda2 = 0.2;
  w.lambda3 = 0.3;
  const losses::LossBreakdown b = losses::total_loss(pred, target, r, w).values();
  EXPECT_NEAR(b.frame, oracle::frame_l2(pred.value(), target.value()), 1e-12);
  EXPECT_NEAR(b.compact, oracle::compact(r.encoding_nc.value(), r.prototypes.value(), r.scores.value()), 1e-12);
  EXPECT_NEAR(b.diversity, oracle::diversity(r.prototypes.value(), 1.0), 1e-12);
  EXPECT_NEAR(b.covariance, oracle::covariance_abs(r.covariance.value()), 1e-12);
  EXPECT_NEAR(b.feature, b.compact + 0.2 * b.diversity + 0.3 * b.covariance, 1e-12);
  EXPECT_NEAR(b.total, b.frame + 0.7 * b.feature, 1e-12);
}

TEST(TotalLoss, WithoutApuOnlyFrameTerm) {
  Rng rng(8);
  Tape t;
  Var pred = t.constant(uniform_tensor({1, 4, 4}, rng, -1, 1)), target = t.constant(uniform_tensor({1, 4, 4}, rng, -1, 1));
  const losses::LossBreakdown b = losses::total_loss(pred, target, std::nullopt, LossWeights{}).values();
  EXPECT_EQ(b.compact, 0.0);
  EXPECT_EQ(b.feature, 0.0);
  EXPECT_EQ(b.total, b.frame);
}

TEST(Oracles, HundredRandomInputs) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(substream(seed, "loss-oracles"));
    const std::size_t n = 1 + rng.below(8), c = 2 + rng.below(4), m = 2 + rng.below(4);
    const Tensor a = uniform_tensor({1, 3, 4}, rng, -1, 1), b = uniform_tensor({1, 3, 4}, rng, -1, 1);
    const Tensor x = uniform_tensor({n, c}, rng, -1, 1), p = uniform_tensor({m, c}, rng, -1, 1);
    const Tensor s = uniform_tensor({n, m}, rng, 0, 1);
    const double gamma = rng.uniform(0.5, 2.0);
    Tape t;
    Var cov = apu::distinguish(t.constant(p));
    EXPECT_NEAR(value(losses::frame_loss(t.constant(a), t.constant(b))), oracle::frame_l2(a, b), 1e-12);
    EXPECT_NEAR(value(losses::compact_loss(t.constant(x), t.constant(p), t.constant(s))), oracle::compact(x, p, s), 1e-12);
    EXPECT_NEAR(value(losses::diversity_loss(t.constant(p), gamma)), oracle::diversity(p, gamma), 1e-12);
    EXPECT_NEAR(value(losses::covariance_loss(cov)), oracle::covariance_abs(oracle::covariance(p)), 1e-12);
  }
}

TEST(Gradients, AllLossVariants) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const gradcheck::Report rep = gradcheck::check_losses(seed);
    EXPECT_TRUE(rep.passed()) << seed << " " << rep.worst_tensor << " " << rep.max_rel_error;
  }
}

TEST(Gradients, FeatureLossOnRandomPrototypes) {
  // Cross-check in both directions: analytic from backward, numeric from the oracle.
  Rng rng(9);
  const Tensor x = uniform_tensor({6, 3}, rng, -1, 1), s = uniform_tensor({6, 4}, rng, 0, 1);
  const Tensor p0 = uniform_tensor({4, 3}, rng, -1, 1);
  const LossWeights w;
  auto feature = [&](const Tensor& p) {
    const Tensor c = oracle::covariance(p);
    return oracle::compact(x, p, s) + w.lambda2 * oracle::diversity(p, w.gamma) + w.lambda3 * oracle::covariance_abs(c);
  };
  Tape t;
  Var p = t.leaf(p0, true);
  Var loss = ops::add(losses::compact_loss(t.constant(x), p, t.constant(s)),
                      ops::add(ops::scale(losses::diversity_loss(p, w.gamma), w.lambda2),
                               ops::scale(losses::covariance_loss(apu::distinguish(p)), w.lambda3)));
  t.backward(loss);
  const Tensor numeric = finite_diff_grad(feature, p0, 1e-5);
  EXPECT_LT(compare_gradients(p.grad(), numeric).max_rel_error, 1e-4);
}
