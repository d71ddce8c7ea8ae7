#include "mexit/pareto.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace mexit {

std::vector<bool> nondominated(const std::vector<std::pair<double, double>>& points) {
  const std::size_t n = points.size();
  std::vector<bool> keep(n, false);
  if (n == 0) return keep;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].first != points[b].first) return points[a].first > points[b].first;
    if (points[a].second != points[b].second) return points[a].second > points[b].second;
    return a < b;
  });

  double best_y = -std::numeric_limits<double>::infinity();   // best y at strictly larger x
  double group_max_y = -std::numeric_limits<double>::infinity();
  double group_x = std::numeric_limits<double>::quiet_NaN();
  bool first = true;

  for (std::size_t idx : order) {
    const auto [x, y] = points[idx];
    if (first || x != group_x) {
      best_y = std::max(best_y, group_max_y);
      group_max_y = -std::numeric_limits<double>::infinity();
      group_x = x;
      first = false;
    }
    if (y <= best_y) continue;       // dominated by a strictly-wider point
    if (y <= group_max_y) continue;  // dominated or duplicated within equal x
    keep[idx] = true;
    group_max_y = y;
  }
  return keep;
}

}  // namespace mexit
