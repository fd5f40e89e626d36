#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "apn/config.hpp"
#include "apn/tensor.hpp"

namespace apn::scoring {

constexpr double kPeak = 2.0;  // pixel range of [-1, 1] frames
constexpr double kMseFloor = 1e-12;

// 10 log10(peak^2 / max(MSE, floor)).
double psnr(const Tensor& predicted, const Tensor& target);

// Compactness error of an encoding against its prototype pool, no gradients.
double feature_error(const Tensor& encoding_nc, const Tensor& prototypes, const Tensor& scores);

// Min-max to [0, 1]; constant sequences map to zeros. Fewer than 2 values raise EmptyVideo.
std::vector<double> normalize_scores(const std::vector<double>& values);

// (pred + lambda_s * feat) / (1 + lambda_s)
double combine(double pred_score, double feat_score, double lambda_s);

struct ScoreRecord {
  std::string video_id;
  std::size_t frame_index = 0;
  double psnr = 0.0;
  double pred_score = 0.0;
  double feat_score = 0.0;
  double combined = 0.0;
  int label = 0;
};

// Raw per-frame descriptors of one video before normalization.
struct RawScores {
  std::string video_id;
  std::vector<std::size_t> frame_index;
  std::vector<double> psnr;
  std::vector<double> feature_error;  // empty when the model has no APU
  std::vector<int> labels;
};

// pred = 1 - norm(psnr), feat = norm(feature error), combined with lambda_s.
// Normalization is per video or over all videos according to `settings`.
std::vector<ScoreRecord> finalize(const std::vector<RawScores>& videos, const ScoreSettings& settings);

struct RocPoint {
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) ... (1,1)
  double auc = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

struct LabeledScore {
  double score;
  int label;
};

// Threshold sweep over distinct scores with trapezoidal area; ties share
// credit. Throws SingleClass when a label is missing.
RocCurve roc_auc(const std::vector<LabeledScore>& scores);

enum class ScoreField { pred, feat, combined };
std::vector<LabeledScore> select(const std::vector<ScoreRecord>& records, ScoreField field);

// Global curve, or the mean of per-video AUCs (videos lacking one class skipped).
RocCurve evaluate(const std::vector<ScoreRecord>& records, ScoreField field, AucMode mode);

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_scores_csv(const std::filesystem::path& path);

json auc_report(const RocCurve& curve);

}  // namespace apn::scoring
