#include "apn/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "apn/errors.hpp"
#include "apn/losses.hpp"

namespace apn::scoring {

double psnr(const Tensor& predicted, const Tensor& target) {
  require_same_shape(predicted, target, "psnr");
  if (predicted.empty()) throw ShapeMismatch("psnr: empty frame");
  double se = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - target[i];
    se += d * d;
  }
  const double mse = std::max(se / static_cast<double>(predicted.size()), kMseFloor);
  return 10.0 * std::log10(kPeak * kPeak / mse);
}

double feature_error(const Tensor& encoding_nc, const Tensor& prototypes, const Tensor& scores) {
  Tape tape;
  Var loss = losses::compact_loss(tape.constant(encoding_nc), tape.constant(prototypes), tape.constant(scores));
  return loss.value().item();
}

std::vector<double> normalize_scores(const std::vector<double>& values) {
  if (values.size() < 2) throw EmptyVideo("normalize_scores: need at least 2 frames, got " + std::to_string(values.size()));
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double min = *lo, range = *hi - *lo;
  std::vector<double> out(values.size(), 0.0);
  if (range > 0.0) {
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - min) / range;
  }
  return out;
}

double combine(double pred_score, double feat_score, double lambda_s) {
  if (lambda_s < 0.0) throw NegativeWeight("combine: lambda_s must be >= 0");
  return (pred_score + lambda_s * feat_score) / (1.0 + lambda_s);
}

std::vector<ScoreRecord> finalize(const std::vector<RawScores>& videos, const ScoreSettings& settings) {
  std::vector<std::vector<double>> pred(videos.size()), feat(videos.size());
  auto normalize_all = [&](auto member, std::vector<std::vector<double>>& out) {
    if (settings.normalization == Normalization::per_video) {
      for (std::size_t v = 0; v < videos.size(); ++v) {
        const auto& vals = videos[v].*member;
        if (!vals.empty()) out[v] = normalize_scores(vals);
      }
      return;
    }
    std::vector<double> flat;
    for (const auto& v : videos) flat.insert(flat.end(), (v.*member).begin(), (v.*member).end());
    if (flat.empty()) return;
    const std::vector<double> norm = normalize_scores(flat);
    std::size_t pos = 0;
    for (std::size_t v = 0; v < videos.size(); ++v) {
      const std::size_t n = (videos[v].*member).size();
      out[v].assign(norm.begin() + static_cast<long>(pos), norm.begin() + static_cast<long>(pos + n));
      pos += n;
    }
  };
  normalize_all(&RawScores::psnr, pred);
  normalize_all(&RawScores::feature_error, feat);

  std::vector<ScoreRecord> out;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const RawScores& raw = videos[v];
    if (raw.psnr.empty()) throw EmptyVideo("finalize: video " + raw.video_id + " has no scored frames");
    const bool has_feat = !raw.feature_error.empty();
    for (std::size_t i = 0; i < raw.psnr.size(); ++i) {
      ScoreRecord r;
      r.video_id = raw.video_id;
      r.frame_index = raw.frame_index[i];
      r.psnr = raw.psnr[i];
      r.pred_score = 1.0 - pred[v][i];
      r.feat_score = has_feat ? feat[v][i] : 0.0;
      r.combined = has_feat ? combine(r.pred_score, r.feat_score, settings.lambda_s) : r.pred_score;
      r.label = raw.labels[i];
      out.push_back(r);
    }
  }
  return out;
}

RocCurve roc_auc(const std::vector<LabeledScore>& scores) {
  RocCurve curve;
  for (const auto& s : scores) (s.label ? curve.n_pos : curve.n_neg)++;
  if (curve.n_pos == 0 || curve.n_neg == 0) {
    throw SingleClass("roc_auc: need both labels, got " + std::to_string(curve.n_pos) + " positive and " +
                      std::to_string(curve.n_neg) + " negative");
  }
  std::vector<LabeledScore> sorted = scores;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const LabeledScore& a, const LabeledScore& b) { return a.score > b.score; });
  const double pos = static_cast<double>(curve.n_pos), neg = static_cast<double>(curve.n_neg);
  std::size_t tp = 0, fp = 0;
  curve.points.push_back({0.0, 0.0});
  // Integer-count trapezoids; divided once at the end.
  double area2 = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    const std::size_t tp0 = tp, fp0 = fp;
    std::size_t j = i;
    for (; j < sorted.size() && sorted[j].score == sorted[i].score; ++j) (sorted[j].label ? tp : fp)++;
    area2 += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0);
    curve.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
    i = j;
  }
  curve.auc = area2 / (2.0 * pos * neg);
  return curve;
}

std::vector<LabeledScore> select(const std::vector<ScoreRecord>& records, ScoreField field) {
  std::vector<LabeledScore> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const double v = field == ScoreField::pred ? r.pred_score : field == ScoreField::feat ? r.feat_score : r.combined;
    out.push_back({v, r.label});
  }
  return out;
}

RocCurve evaluate(const std::vector<ScoreRecord>& records, ScoreField field, AucMode mode) {
  if (mode == AucMode::global) return roc_auc(select(records, field));
  std::map<std::string, std::vector<ScoreRecord>> by_video;
  for (const auto& r : records) by_video[r.video_id].push_back(r);
  RocCurve out;
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& [id, recs] : by_video) {
    auto sel = select(recs, field);
    const bool both = std::any_of(sel.begin(), sel.end(), [](auto& s) { return s.label; }) &&
                      std::any_of(sel.begin(), sel.end(), [](auto& s) { return !s.label; });
    for (const auto& s : sel) (s.label ? out.n_pos : out.n_neg)++;
    if (!both) continue;
    total += roc_auc(sel).auc;
    ++used;
  }
  if (used == 0) throw SingleClass("evaluate: no video contains both labels");
  out.auc = total / static_cast<double>(used);
  return out;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRecord>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << "video_id,frame_index,psnr,pred_score,feat_score,combined,label\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%d\n", r.frame_index, r.psnr, r.pred_score,
                  r.feat_score, r.combined, r.label);
    os << r.video_id << ',' << buf;
  }
}

std::vector<ScoreRecord> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "video_id,frame_index,psnr,pred_score,feat_score,combined,label") {
    throw Error(path.string() + ": unexpected scores header");
  }
  std::vector<ScoreRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cols.push_back(cell);
    if (cols.size() != 7) throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 7 columns");
    ScoreRecord r;
    try {
      r.video_id = cols[0];
      r.frame_index = std::stoul(cols[1]);
      r.psnr = std::stod(cols[2]);
      r.pred_score = std::stod(cols[3]);
      r.feat_score = std::stod(cols[4]);
      r.combined = std::stod(cols[5]);
      r.label = std::stoi(cols[6]);
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    out.push_back(r);
  }
  return out;
}

json auc_report(const RocCurve& curve) {
  json points = json::array();
  for (const auto& p : curve.points) points.push_back({p.fpr, p.tpr});
  return {{"auc", curve.auc}, {"n_pos", curve.n_pos}, {"n_neg", curve.n_neg}, {"curve_points", points}};
}

}  // namespace apn::scoring
