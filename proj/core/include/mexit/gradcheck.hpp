#pragma once

#include <functional>
#include <span>
#include <vector>

namespace mexit {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
};

/// Compares an analytic gradient against central finite differences.
///
/// Per parameter i: |analytic_i - fd_i| / max(1e-8, |fd_i|), where
/// fd_i = (loss(theta + eps e_i) - loss(theta - eps e_i)) / (2 eps).
/// epsilon must lie in [1e-6, 1e-3]. A non-finite loss raises
/// numerical_error naming the parameter index being probed.
GradCheckReport gradient_check(
    const std::function<double(std::span<const double>)>& loss,
    const std::function<std::vector<double>(std::span<const double>)>& analytic_gradient,
    std::span<const double> params, double epsilon);

}  // namespace mexit
