#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "apn/errors.hpp"
#include "apn/rng.hpp"
#include "apn/scoring.hpp"
#include "oracles.hpp"

using namespace apn;
using scoring::LabeledScore;

namespace {

std::vector<LabeledScore> labeled(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<LabeledScore> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({s[i], y[i]});
  return out;
}

}  // namespace

TEST(Psnr, PerfectPredictionIsCapped) {
  const Tensor y({1, 4, 4}, 0.3);
  EXPECT_NEAR(scoring::psnr(y, y), 10 * std::log10(4.0 / 1e-12), 1e-9);
  EXPECT_NEAR(scoring::psnr(y, y), 126.02, 0.005);
}

TEST(Psnr, KnownErrors) {
  EXPECT_NEAR(scoring::psnr(Tensor({1, 2, 2}, 1.0), Tensor({1, 2, 2}, -1.0)), 0.0, 1e-12);
  EXPECT_NEAR(scoring::psnr(Tensor({1, 2, 2}, 0.2), Tensor({1, 2, 2}, 0.0)), 20.0, 1e-12);
  EXPECT_THROW(scoring::psnr(Tensor({1, 2, 2}), Tensor({1, 2, 3})), ShapeMismatch);
}

TEST(FeatureError, SharesCompactOracle) {
  EXPECT_DOUBLE_EQ(scoring::feature_error(Tensor::from({{0, 0}}), Tensor::from({{3, 4}}), Tensor::from({{1}})), 5.0);
  const Tensor p = Tensor::from({{1, 0}, {0, 2}});
  EXPECT_EQ(scoring::feature_error(Tensor::from({{0, 2}, {1, 0}}), p, Tensor::from({{0.1, 0.9}, {0.8, 0.2}})), 0.0);
  Rng rng(1);
  const Tensor x = uniform_tensor({9, 3}, rng, -1, 1), q = uniform_tensor({4, 3}, rng, -1, 1);
  const Tensor s = uniform_tensor({9, 4}, rng, 0, 1);
  EXPECT_NEAR(scoring::feature_error(x, q, s), oracle::compact(x, q, s), 1e-12);
  EXPECT_THROW(scoring::feature_error(x, Tensor({0, 3}), Tensor({9, 0})), TooFewPrototypes);
}

TEST(Normalize, Examples) {
  EXPECT_EQ(scoring::normalize_scores({2, 2, 2}), (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(scoring::normalize_scores({1, 3}), (std::vector<double>{0, 1}));
  const auto n = scoring::normalize_scores({1, 2, 4});
  EXPECT_DOUBLE_EQ(n[1], 1.0 / 3.0);
  EXPECT_EQ(n[0], 0.0);
  EXPECT_EQ(n[2], 1.0);
}

TEST(Normalize, FewerThanTwoFramesRejected) {
  EXPECT_THROW(scoring::normalize_scores({}), EmptyVideo);
  EXPECT_THROW(scoring::normalize_scores({3.0}), EmptyVideo);
}

TEST(Combine, Examples) {
  EXPECT_EQ(scoring::combine(0.37, 0.9, 0.0), 0.37);
  EXPECT_DOUBLE_EQ(scoring::combine(0.2, 0.6, 1.0), 0.4);
  EXPECT_DOUBLE_EQ(scoring::combine(0.0, 1.0, 3.0), 0.75);
  EXPECT_THROW(scoring::combine(0.1, 0.2, -1.0), NegativeWeight);
}

TEST(RocAuc, Examples) {
  EXPECT_EQ(scoring::roc_auc(labeled({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1})).auc, 1.0);
  EXPECT_EQ(scoring::roc_auc(labeled({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1})).auc, 0.5);
  EXPECT_DOUBLE_EQ(scoring::roc_auc(labeled({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1})).auc, 0.75);
}

TEST(RocAuc, SingleClassRejected) {
  EXPECT_THROW(scoring::roc_auc(labeled({0.1, 0.2}, {1, 1})), SingleClass);
  EXPECT_THROW(scoring::roc_auc(labeled({0.1, 0.2}, {0, 0})), SingleClass);
}

TEST(RocAuc, CurveShape) {
  const auto curve = scoring::roc_auc(labeled({0.1, 0.4, 0.35, 0.8, 0.4}, {0, 0, 1, 1, 1}));
  ASSERT_GE(curve.points.size(), 2u);
  EXPECT_EQ(curve.points.front().fpr, 0.0);
  EXPECT_EQ(curve.points.front().tpr, 0.0);
  EXPECT_EQ(curve.points.back().fpr, 1.0);
  EXPECT_EQ(curve.points.back().tpr, 1.0);
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    EXPECT_GE(curve.points[i].fpr, curve.points[i - 1].fpr);
    EXPECT_GE(curve.points[i].tpr, curve.points[i - 1].tpr);
  }
  EXPECT_EQ(curve.n_pos, 3u);
  EXPECT_EQ(curve.n_neg, 2u);
}

TEST(RocAuc, EqualsPairCountingOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng rng(substream(seed, "auc"));
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> s(n);
    std::vector<int> y(n);
    // Coarse grid so ties are common.
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<double>(rng.below(12)) / 11.0, y[i] = rng.below(2);
    y[0] = 0, y[1] = 1;
    EXPECT_NEAR(scoring::roc_auc(labeled(s, y)).auc, oracle::pair_auc(s, y), 1e-12) << "seed " << seed;
  }
}

TEST(RocAuc, InvariantUnderIncreasingTransform) {
  Rng rng(2);
  std::vector<double> s(40), t(40);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    s[i] = rng.uniform(-2, 2);
    t[i] = std::exp(3 * s[i]) + 5;
    y[i] = i % 3 == 0;
  }
  EXPECT_DOUBLE_EQ(scoring::roc_auc(labeled(s, y)).auc, scoring::roc_auc(labeled(t, y)).auc);
}

TEST(Finalize, DirectionsAndRanges) {
  scoring::RawScores v;
  v.video_id = "v";
  v.frame_index = {4, 5, 6, 7};
  v.psnr = {30, 20, 25, 40};
  v.feature_error = {0.1, 0.5, 0.2, 0.0};
  v.labels = {0, 1, 0, 0};
  const auto recs = scoring::finalize({v}, ScoreSettings{});
  ASSERT_EQ(recs.size(), 4u);
  // Lowest PSNR and highest feature error give the largest anomaly scores.
  EXPECT_EQ(recs[1].pred_score, 1.0);
  EXPECT_EQ(recs[3].pred_score, 0.0);
  EXPECT_EQ(recs[1].feat_score, 1.0);
  EXPECT_EQ(recs[3].feat_score, 0.0);
  for (const auto& r : recs) {
    EXPECT_GE(r.combined, 0.0);
    EXPECT_LE(r.combined, 1.0);
    EXPECT_DOUBLE_EQ(r.combined, (r.pred_score + r.feat_score) / 2);
  }
  EXPECT_EQ(recs[2].frame_index, 6u);
  EXPECT_EQ(recs[1].label, 1);
  EXPECT_EQ(recs[0].video_id, "v");
}

TEST(Finalize, MonotoneInEachDescriptor) {
  scoring::RawScores v;
  v.video_id = "m";
  for (int i = 0; i < 10; ++i) {
    v.frame_index.push_back(i);
    v.psnr.push_back(40 - 2.0 * i);
    v.feature_error.push_back(0.1 * i * i);
    v.labels.push_back(i > 5);
  }
  const auto recs = scoring::finalize({v}, ScoreSettings{});
  for (std::size_t i = 1; i < recs.size(); ++i) {
    EXPECT_GT(recs[i].pred_score, recs[i - 1].pred_score);
    EXPECT_GT(recs[i].feat_score, recs[i - 1].feat_score);
  }
}

TEST(Finalize, WithoutApuCombinedIsPred) {
  scoring::RawScores v;
  v.video_id = "p";
  v.frame_index = {0, 1, 2};
  v.psnr = {10, 30, 20};
  v.labels = {1, 0, 0};
  for (const auto& r : scoring::finalize({v}, ScoreSettings{})) {
    EXPECT_EQ(r.feat_score, 0.0);
    EXPECT_EQ(r.combined, r.pred_score);
  }
}

TEST(Finalize, GlobalVersusPerVideoNormalization) {
  scoring::RawScores a, b;
  a.video_id = "a", b.video_id = "b";
  a.frame_index = b.frame_index = {0, 1};
  a.psnr = {10, 20};
  b.psnr = {30, 40};
  a.labels = b.labels = {0, 1};
  ScoreSettings per;
  ScoreSettings global;
  global.normalization = Normalization::global;
  const auto p = scoring::finalize({a, b}, per), g = scoring::finalize({a, b}, global);
  EXPECT_EQ(p[2].pred_score, 1.0);  // b's own minimum
  EXPECT_DOUBLE_EQ(g[2].pred_score, 1.0 - 20.0 / 30.0);
}

TEST(Evaluate, PerVideoMeanSkipsSingleClassVideos) {
  std::vector<scoring::ScoreRecord> recs;
  auto add = [&](const char* id, double s, int y) { recs.push_back({id, 0, 0, s, 0, s, y}); };
  add("a", 0.1, 0), add("a", 0.9, 1);  // auc 1
  add("b", 0.9, 0), add("b", 0.1, 1);  // auc 0
  add("c", 0.5, 0), add("c", 0.6, 0);  // skipped
  EXPECT_DOUBLE_EQ(scoring::evaluate(recs, scoring::ScoreField::combined, AucMode::per_video_mean).auc, 0.5);
  EXPECT_DOUBLE_EQ(scoring::evaluate(recs, scoring::ScoreField::combined, AucMode::global).auc,
                   oracle::pair_auc({0.1, 0.9, 0.9, 0.1, 0.5, 0.6}, {0, 1, 0, 1, 0, 0}));
}

TEST(ScoresCsv, RoundTrip) {
  std::vector<scoring::ScoreRecord> recs{{"test_000", 4, 31.25, 0.1, 0.2, 0.15, 0},
                                         {"test_001", 9, 1.0 / 3.0, 1.0, 0.0, 0.5, 1}};
  const auto path = std::filesystem::temp_directory_path() / "apn_scores.csv";
  scoring::write_scores_csv(path, recs);
  const auto back = scoring::read_scores_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].video_id, "test_001");
  EXPECT_EQ(back[1].psnr, 1.0 / 3.0);
  EXPECT_EQ(back[1].label, 1);
  EXPECT_EQ(back[0].frame_index, 4u);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "video_id,frame_index,psnr,pred_score,feat_score,combined,label");
  std::filesystem::remove(path);
}

TEST(AucReport, Fields) {
  const json j = scoring::auc_report(scoring::roc_auc(labeled({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1})));
  EXPECT_EQ(j.at("auc").get<double>(), 0.75);
  EXPECT_EQ(j.at("n_pos").get<int>(), 2);
  EXPECT_EQ(j.at("n_neg").get<int>(), 2);
  EXPECT_TRUE(j.at("curve_points").is_array());
}
