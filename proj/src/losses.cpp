#include "apn/losses.hpp"

#include <cmath>

#include "apn/errors.hpp"
#include "apn/ops.hpp"

namespace apn::losses {
namespace {

double pair_norm(std::size_t m) { return 2.0 / (static_cast<double>(m) * static_cast<double>(m - 1)); }

}  // namespace

Var frame_loss(Var predicted, Var target, FrameLossKind kind) {
  if (predicted.shape() != target.shape()) {
    throw ShapeMismatch("frame_loss: " + shape_str(predicted.shape()) + " vs " + shape_str(target.shape()));
  }
  Var diff = ops::sub(predicted, target);
  if (kind == FrameLossKind::mse) return ops::mean(ops::mul(diff, diff));
  return ops::l2_norm(diff);
}

std::vector<std::size_t> assignment(const Tensor& scores) {
  if (scores.rank() != 2 || scores.dim(1) == 0) throw TooFewPrototypes("assignment: empty score matrix");
  const std::size_t n = scores.dim(0), m = scores.dim(1);
  std::vector<std::size_t> idx(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 1; k < m; ++k)
      if (scores[i * m + k] > scores[i * m + idx[i]]) idx[i] = k;
  return idx;
}

Var compact_loss(Var encoding_nc, Var prototypes, Var scores) {
  if (prototypes.shape().size() != 2 || prototypes.dim(0) == 0) throw TooFewPrototypes("compact_loss: empty pool");
  return compact_loss(encoding_nc, prototypes, assignment(scores.value()));
}

Var compact_loss(Var encoding_nc, Var prototypes, const std::vector<std::size_t>& assigned) {
  if (prototypes.shape().size() != 2 || prototypes.dim(0) == 0) throw TooFewPrototypes("compact_loss: empty pool");
  if (encoding_nc.shape().size() != 2 || encoding_nc.dim(1) != prototypes.dim(1) ||
      assigned.size() != encoding_nc.dim(0)) {
    throw ShapeMismatch("compact_loss: encoding " + shape_str(encoding_nc.shape()) + " vs prototypes " +
                        shape_str(prototypes.shape()));
  }
  Var nearest = ops::gather_rows(prototypes, assigned);
  return ops::mean(ops::row_norms(ops::sub(encoding_nc, nearest)));
}

Var diversity_loss(Var prototypes, double gamma, DiversityKind kind) {
  const Shape& s = prototypes.shape();
  if (s.size() != 2 || s[0] < 2) throw TooFewPrototypes("diversity_loss: need M >= 2, got " + shape_str(s));
  const std::size_t m = s[0];
  std::vector<std::size_t> first, second;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      first.push_back(i);
      second.push_back(j);
    }
  Var dist = ops::row_norms(ops::sub(ops::gather_rows(prototypes, first), ops::gather_rows(prototypes, second)));
  Var hinge = ops::relu(ops::add_scalar(ops::scale(dist, -1.0), gamma));
  if (kind == DiversityKind::squared_hinge) hinge = ops::mul(hinge, hinge);
  return ops::scale(ops::sum(hinge), pair_norm(m));
}

Var covariance_loss(Var covariance, CovarianceKind kind) {
  const Shape& s = covariance.shape();
  if (s.size() != 2 || s[0] != s[1] || s[0] < 2) {
    throw TooFewPrototypes("covariance_loss: need an M x M matrix with M >= 2, got " + shape_str(s));
  }
  const std::size_t m = s[0];
  std::vector<std::size_t> upper;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) upper.push_back(i * m + j);
  Var off = ops::gather_rows(ops::reshape(covariance, {m * m, 1}), upper);
  if (kind == CovarianceKind::frobenius) return ops::scale(ops::l2_norm(off), std::sqrt(2.0));
  return ops::scale(ops::sum(ops::abs(off)), pair_norm(m));
}

LossBreakdown combine(double frame, double compact, double diversity, double covariance, const LossWeights& w) {
  LossBreakdown b{frame, compact, diversity, covariance, 0.0, 0.0};
  b.feature = compact + w.lambda2 * diversity + w.lambda3 * covariance;
  b.total = frame + w.lambda1 * b.feature;
  return b;
}

LossBreakdown Terms::values() const {
  auto v = [](const Var& x) { return x.valid() ? x.value().item() : 0.0; };
  return {v(frame), v(compact), v(diversity), v(covariance), v(feature), v(total)};
}

Terms total_loss(Var predicted, Var target, const std::optional<apu::Result>& apu, const LossWeights& w,
                 const std::vector<std::size_t>* fixed_assignment) {
  Terms t;
  t.frame = frame_loss(predicted, target, w.frame);
  if (!apu) {
    t.total = t.frame;
    return t;
  }
  t.compact = fixed_assignment ? compact_loss(apu->encoding_nc, apu->prototypes, *fixed_assignment)
                               : compact_loss(apu->encoding_nc, apu->prototypes, apu->scores);
  Var feature = t.compact;
  if (apu->prototypes.dim(0) >= 2) {
    t.diversity = diversity_loss(apu->prototypes, w.gamma, w.diversity);
    feature = ops::add(feature, ops::scale(t.diversity, w.lambda2));
  }
  if (apu->covariance.valid()) {
    t.covariance = covariance_loss(apu->covariance, w.covariance);
    feature = ops::add(feature, ops::scale(t.covariance, w.lambda3));
  }
  t.feature = feature;
  t.total = ops::add(t.frame, ops::scale(feature, w.lambda1));
  return t;
}

}  // namespace apn::losses
