#include <gtest/gtest.h>

#include "apn/backbone.hpp"
#include "apn/cau.hpp"
#include "apn/errors.hpp"
#include "apn/gradcheck.hpp"
#include "apn/ops.hpp"
#include "apn/rng.hpp"
#include "oracles.hpp"

using namespace apn;

namespace {

oracle::CauWeights random_weights(std::size_t c, Rng& rng) {
  const std::size_t r = cau::reduced_channels(c, 2);
  return {uniform_tensor({r, c}, rng, -1, 1), uniform_tensor({r, c}, rng, -1, 1), uniform_tensor({c, c}, rng, -0.5, 0.5),
          uniform_tensor({c, 2 * c}, rng, -0.5, 0.5), uniform_tensor({c}, rng, -0.5, 0.5)};
}

cau::Weights place(Tape& t, const oracle::CauWeights& w) {
  return {t.constant(w.query), t.constant(w.key), t.constant(w.value), t.constant(w.fuse_weight),
          t.constant(w.fuse_bias)};
}

// Positions of the pre-fusion output that move when input position p is perturbed.
std::vector<bool> influence(std::size_t h, std::size_t w, std::size_t loops, std::size_t p, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t c = 3;
  const Tensor feat = uniform_tensor({c, h, w}, rng, -1, 1);
  const oracle::CauWeights wt = random_weights(c, rng);
  Tensor bumped = feat;
  for (std::size_t k = 0; k < c; ++k) bumped[k * h * w + p] += 0.5;
  Tape t;
  const cau::Weights wv = place(t, wt);
  const Tensor a = cau::rca_context(t.constant(feat), wv, loops).value();
  const Tensor b = cau::rca_context(t.constant(bumped), wv, loops).value();
  std::vector<bool> moved(h * w, false);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t u = 0; u < h * w; ++u) moved[u] = moved[u] || std::abs(a[k * h * w + u] - b[k * h * w + u]) > 1e-12;
  return moved;
}

}  // namespace

TEST(KeyLayout, ColumnThenRowSkippingSelf) {
  const std::size_t h = 3, w = 4;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto want = oracle::criss_cross_keys(i, j, h, w);
      ASSERT_EQ(want.size(), h + w - 1);
      for (std::size_t a = 0; a < want.size(); ++a) {
        const cau::GridPos got = cau::criss_cross_key(i, j, a, h, w);
        EXPECT_EQ(got.row, want[a].first);
        EXPECT_EQ(got.col, want[a].second);
      }
    }
}

TEST(ReducedChannels, FloorOfOne) {
  EXPECT_EQ(cau::reduced_channels(4), 1u);
  EXPECT_EQ(cau::reduced_channels(16), 2u);
  EXPECT_EQ(cau::reduced_channels(64), 8u);
}

TEST(Affinity, SingleCellIsOne) {
  Rng rng(1);
  Tape t;
  Tensor a = cau::cc_affinity(t.constant(uniform_tensor({2, 1, 1}, rng, -1, 1)),
                              t.constant(uniform_tensor({2, 1, 1}, rng, -1, 1)))
                 .value();
  ASSERT_EQ(a.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(a[0], 1.0);
}

TEST(Affinity, ZeroQueryIsUniform) {
  Rng rng(2);
  Tape t;
  Tensor a = cau::cc_affinity(t.constant(Tensor({2, 3, 4})), t.constant(uniform_tensor({2, 3, 4}, rng, -1, 1))).value();
  ASSERT_EQ(a.dim(0), 6u);
  for (double v : a.values()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(Affinity, MatchesPerPositionOracle) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{3, 3}, {2, 5}, {5, 1}, {1, 4}}) {
    Rng rng(h * 10 + w);
    const Tensor q = uniform_tensor({2, h, w}, rng, -2, 2), k = uniform_tensor({2, h, w}, rng, -2, 2);
    Tape t;
    cau::OpCounter counter;
    Tensor a = cau::cc_affinity(t.constant(q), t.constant(k), &counter).value();
    EXPECT_LE(max_abs_diff(a, oracle::cc_affinity(q, k)), 1e-12);
    EXPECT_EQ(counter.affinity_ops(), h * w * (h + w - 1));
    for (std::size_t u = 0; u < h * w; ++u) {
      double s = 0;
      for (std::size_t l = 0; l < h + w - 1; ++l) s += a[l * h * w + u];
      EXPECT_NEAR(s, 1.0, 1e-10);
    }
  }
}

TEST(Affinity, ShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(cau::cc_affinity(t.constant(Tensor({2, 3, 3})), t.constant(Tensor({2, 3, 4}))), ShapeMismatch);
  EXPECT_THROW(cau::cc_affinity(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3}))), ShapeMismatch);
}

TEST(Aggregate, ZeroValueIsPureResidual) {
  Rng rng(3);
  const Tensor feat = uniform_tensor({2, 3, 3}, rng, -1, 1);
  Tape t;
  Tensor a = cau::cc_affinity(t.constant(uniform_tensor({1, 3, 3}, rng, -1, 1)), t.constant(uniform_tensor({1, 3, 3}, rng, -1, 1))).value();
  EXPECT_EQ(cau::cc_aggregate(t.constant(a), t.constant(Tensor({2, 3, 3})), t.constant(feat)).value(), feat);
}

TEST(Aggregate, TwoCellHandExpansion) {
  // 1x2 grid, uniform affinity: each output = input + (v0 + v1) / 2.
  const Tensor feat = Tensor({1, 1, 2}, std::vector<double>{0.3, -0.7});
  const Tensor value = Tensor({1, 1, 2}, std::vector<double>{2.0, 4.0});
  Tape t;
  Tensor out = cau::cc_aggregate(t.constant(Tensor({2, 1, 2}, 0.5)), t.constant(value), t.constant(feat)).value();
  EXPECT_DOUBLE_EQ(out[0], 0.3 + 3.0);
  EXPECT_DOUBLE_EQ(out[1], -0.7 + 3.0);
}

TEST(Aggregate, MatchesPerPositionOracle) {
  Rng rng(4);
  const std::size_t h = 4, w = 3;
  const Tensor q = uniform_tensor({2, h, w}, rng, -1, 1), k = uniform_tensor({2, h, w}, rng, -1, 1);
  const Tensor v = uniform_tensor({3, h, w}, rng, -1, 1), res = uniform_tensor({3, h, w}, rng, -1, 1);
  const Tensor a = oracle::cc_affinity(q, k);
  Tape t;
  Tensor got = cau::cc_aggregate(t.constant(a), t.constant(v), t.constant(res)).value();
  EXPECT_LE(max_abs_diff(got, oracle::cc_aggregate(a, v, res)), 1e-12);
}

TEST(Rca, MatchesComposedOracle) {
  for (std::size_t loops : {1u, 2u, 3u}) {
    Rng rng(5 + loops);
    const Tensor feat = uniform_tensor({4, 3, 5}, rng, -1, 1);
    const oracle::CauWeights w = random_weights(4, rng);
    Tape t;
    Tensor got = cau::rca_forward(t.constant(feat), place(t, w), loops).value();
    EXPECT_LE(max_abs_diff(got, oracle::rca(feat, w, loops)), 1e-12) << "R=" << loops;
  }
}

TEST(Rca, ImpulseReachesRowAndColumnThenEverything) {
  const std::size_t h = 4, w = 5;
  for (std::size_t p = 0; p < h * w; ++p) {
    const auto one = influence(h, w, 1, p, p);
    const auto two = influence(h, w, 2, p, p);
    for (std::size_t u = 0; u < h * w; ++u) {
      EXPECT_EQ(one[u], u / w == p / w || u % w == p % w) << "p=" << p << " u=" << u;
      EXPECT_TRUE(two[u]) << "p=" << p << " u=" << u;
    }
  }
}

TEST(Rca, ParameterCountIndependentOfLoops) {
  ModelConfig one;
  one.frame_height = one.frame_width = 16;
  ModelConfig four = one;
  four.loops = 4;
  EXPECT_EQ(backbone::param_shapes(one), backbone::param_shapes(four));
}

TEST(Rca, SharedWeightsCollectGradientFromEveryLoop) {
  // d/dW of R loops is the sum over loops, so R=2 differs from R=1 while the
  // leaf count stays five.
  Rng rng(6);
  const Tensor feat = uniform_tensor({4, 3, 3}, rng, -1, 1);
  const oracle::CauWeights wt = random_weights(4, rng);
  std::vector<Tensor> grads;
  for (std::size_t loops : {1u, 2u}) {
    Tape t;
    cau::Weights w{t.leaf(wt.query, true), t.leaf(wt.key, true), t.leaf(wt.value, true), t.leaf(wt.fuse_weight, true),
                   t.leaf(wt.fuse_bias, true)};
    t.backward(ops::sum(cau::rca_forward(t.constant(feat), w, loops)));
    grads.push_back(w.value.grad());
  }
  EXPECT_GT(max_abs_diff(grads[0], grads[1]), 1e-6);
}

TEST(Dense, SingleCellMatchesCrissCross) {
  Rng rng(7);
  const Tensor feat = uniform_tensor({3, 1, 1}, rng, -1, 1);
  const oracle::CauWeights w = random_weights(3, rng);
  Tape t;
  EXPECT_EQ(cau::dense_attention_forward(t.constant(feat), place(t, w)).value(),
            cau::criss_cross(t.constant(feat), place(t, w)).value());
}

TEST(Dense, ZeroQueryAddsMeanValue) {
  Rng rng(8);
  const Tensor feat = uniform_tensor({2, 3, 3}, rng, -1, 1);
  oracle::CauWeights w = random_weights(2, rng);
  w.query.fill(0.0);
  Tape t;
  Tensor out = cau::dense_attention_forward(t.constant(feat), place(t, w)).value();
  const Tensor v = oracle::project(feat, w.value);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double mean = 0;
    for (std::size_t u = 0; u < 9; ++u) mean += v[ch * 9 + u] / 9;
    for (std::size_t u = 0; u < 9; ++u) EXPECT_NEAR(out[ch * 9 + u], feat[ch * 9 + u] + mean, 1e-14);
  }
}

TEST(Dense, MatchesBruteForce) {
  Rng rng(9);
  const Tensor feat = uniform_tensor({3, 3, 3}, rng, -1, 1);
  const oracle::CauWeights w = random_weights(3, rng);
  Tape t;
  cau::OpCounter counter;
  Tensor out = cau::dense_attention_forward(t.constant(feat), place(t, w), &counter).value();
  EXPECT_LE(max_abs_diff(out, oracle::dense_attention(feat, w)), 1e-12);
  EXPECT_EQ(counter.affinity_ops(), 81u);
}

TEST(Complexity, CountsMatchFormula) {
  struct Case {
    std::size_t h, w, r;
    std::uint64_t cc, dense;
  };
  for (const Case& c : {Case{1, 1, 1, 1, 1}, Case{16, 16, 2, 15872, 65536}, Case{4, 6, 2, 432, 576}}) {
    const cau::ComplexityReport rep = cau::complexity_report(c.h, c.w, c.r, 4);
    EXPECT_EQ(rep.cc_ops, c.cc);
    EXPECT_EQ(rep.dense_ops, c.dense);
    EXPECT_TRUE(rep.counts_match());
  }
  EXPECT_NEAR(cau::complexity_report(16, 16, 2, 4).ratio, 15872.0 / 65536.0, 1e-15);
}

TEST(Complexity, CounterIsMonotoneWithinAForwardPass) {
  Rng rng(10);
  const Tensor feat = uniform_tensor({4, 3, 3}, rng, -1, 1);
  const oracle::CauWeights w = random_weights(4, rng);
  Tape t;
  cau::OpCounter counter;
  std::uint64_t last = 0;
  Var x = t.constant(feat);
  for (int loop = 0; loop < 3; ++loop) {
    x = cau::criss_cross(x, place(t, w), &counter);
    EXPECT_GT(counter.affinity_ops(), last);
    last = counter.affinity_ops();
  }
  EXPECT_EQ(last, 3u * 9u * 5u);
}

TEST(Gradients, WeightsAndInputMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const gradcheck::Report rep = gradcheck::check_cau(seed);
    EXPECT_TRUE(rep.passed()) << rep.worst_tensor << " " << rep.max_rel_error;
  }
}
