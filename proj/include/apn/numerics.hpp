#pragma once

#include <cstddef>
#include <functional>

#include "apn/tensor.hpp"

namespace apn {

using ScalarFn = std::function<double(const Tensor&)>;

// Central differences (f(t + h e_i) - f(t - h e_i)) / 2h for every coordinate.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& theta, double h);

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-8);

struct GradComparison {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

GradComparison compare_gradients(const Tensor& analytic, const Tensor& numeric, double floor = 1e-8);

}  // namespace apn
