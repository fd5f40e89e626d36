#pragma once

#include <optional>
#include <vector>

#include "apn/apu.hpp"
#include "apn/config.hpp"
#include "apn/tape.hpp"

namespace apn::losses {

// ||yhat - y||_2 over all pixels (or the mean squared error variant).
Var frame_loss(Var predicted, Var target, FrameLossKind kind = FrameLossKind::l2);

// Index of the most relevant prototype per encoding vector (ties: lowest index).
std::vector<std::size_t> assignment(const Tensor& scores);

// (1/N) sum_n ||x_n - p_{m*(n)}||_2 with m*(n) = argmax_m scores[n, m]; the
// assignment is held constant for differentiation.
Var compact_loss(Var encoding_nc, Var prototypes, Var scores);
Var compact_loss(Var encoding_nc, Var prototypes, const std::vector<std::size_t>& assigned);

// 2/(M(M-1)) sum_{m<m'} max(0, gamma - ||p_m - p_m'||_2) (optionally squared).
Var diversity_loss(Var prototypes, double gamma, DiversityKind kind = DiversityKind::hinge);

// 2/(M(M-1)) sum_{m<m'} |cov[m, m']|, or the Frobenius norm of the off-diagonal.
Var covariance_loss(Var covariance, CovarianceKind kind = CovarianceKind::abs);

struct LossBreakdown {
  double frame = 0.0;
  double compact = 0.0;
  double diversity = 0.0;
  double covariance = 0.0;
  double feature = 0.0;
  double total = 0.0;
};

// feature = compact + l2*diversity + l3*covariance; total = frame + l1*feature.
LossBreakdown combine(double frame, double compact, double diversity, double covariance, const LossWeights& w);

struct Terms {
  Var frame;
  Var compact;     // invalid when the APU is absent
  Var diversity;   // invalid when M < 2
  Var covariance;  // invalid when M < 2 or c < 2
  Var feature;
  Var total;

  LossBreakdown values() const;
};

// Full objective for one prediction. Missing terms count as zero.
Terms total_loss(Var predicted, Var target, const std::optional<apu::Result>& apu, const LossWeights& w,
                 const std::vector<std::size_t>* fixed_assignment = nullptr);

}  // namespace apn::losses
