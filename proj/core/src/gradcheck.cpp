#include "mexit/gradcheck.hpp"

#include <cmath>
#include <string>

#include "mexit/errors.hpp"

namespace mexit {

GradCheckReport gradient_check(
    const std::function<double(std::span<const double>)>& loss,
    const std::function<std::vector<double>(std::span<const double>)>& analytic_gradient,
    std::span<const double> params, double epsilon) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw invalid_input("gradient_check: epsilon must lie in [1e-6, 1e-3]");
  }
  std::vector<double> theta(params.begin(), params.end());
  const std::vector<double> analytic = analytic_gradient(theta);
  if (analytic.size() != theta.size()) {
    throw invalid_input("gradient_check: gradient length does not match parameters");
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + epsilon;
    const double up = loss(theta);
    theta[i] = saved - epsilon;
    const double down = loss(theta);
    theta[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw numerical_error("gradient_check: non-finite loss probing parameter " +
                            std::to_string(i));
    }
    const double fd = (up - down) / (2.0 * epsilon);
    const double rel = std::abs(analytic[i] - fd) / std::max(1e-8, std::abs(fd));
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
    }
  }
  return report;
}

}  // namespace mexit
