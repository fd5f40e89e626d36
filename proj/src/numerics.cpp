#include "apn/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "apn/errors.hpp"

namespace apn {

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& theta, double h) {
  if (!(h > 0.0)) throw Error("finite_diff_grad: step must be positive");
  Tensor grad(theta.shape());
  Tensor probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradComparison compare_gradients(const Tensor& analytic, const Tensor& numeric, double floor) {
  require_same_shape(analytic, numeric, "compare_gradients");
  GradComparison out;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double e = relative_error(analytic[i], numeric[i], floor);
    if (e > out.max_rel_error || i == 0) {
      out.max_rel_error = std::max(out.max_rel_error, e);
      out.worst_index = i;
      out.worst_analytic = analytic[i];
      out.worst_numeric = numeric[i];
    }
  }
  return out;
}

}  // namespace apn
