#pragma once

#include <utility>
#include <vector>

namespace mexit {

/// Weak-dominance nondominated flags for (x, y) points, both axes maximized.
/// A point is dropped when another point is at least as good on both axes and
/// strictly better on one; exact duplicates keep only the first occurrence.
/// O(n log n).
std::vector<bool> nondominated(const std::vector<std::pair<double, double>>& points);

}  // namespace mexit
