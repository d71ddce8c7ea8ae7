#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mexit/calibration.hpp"

namespace mexit {

inline constexpr double ECE_FLOOR = 1e-4;
inline constexpr double DEFAULT_HEURISTIC_EPSILON = 0.05;
inline constexpr std::size_t DEFAULT_SEARCH_BUDGET = 1'000'000;
inline constexpr double SWEEP_ENDPOINT_LOW = 0.001;
inline constexpr double SWEEP_ENDPOINT_HIGH = 0.999;

/// Maximum softmax probability, the exit criterion.
double msp(std::span<const double> probs);

struct ExitPolicy {
  enum class Kind { Global, MultiExit, Heuristic };

  Kind kind = Kind::Global;
  double global_tau = 0.5;
  std::vector<double> thresholds;  // MultiExit / Heuristic
  double epsilon = DEFAULT_HEURISTIC_EPSILON;

  static ExitPolicy global(double tau);
  static ExitPolicy multi(std::vector<double> thresholds);
  static ExitPolicy heuristic(double epsilon, std::vector<double> thresholds);

  /// Per-exit thresholds (the global variant repeats its scalar).
  std::vector<double> resolve(std::size_t exit_count) const;
  void validate() const;  // every threshold strictly inside (0,1)
  std::string kind_str() const;
};

void save_policy(const ExitPolicy& policy, const std::filesystem::path& path);
ExitPolicy load_policy(const std::filesystem::path& path);

struct ExitDecision {
  std::size_t exit_index = 0;  // == exit count when the final classifier answered
  bool is_final = false;
  std::size_t predicted_class = 0;
  double confidence = 0.0;
  double cost_fraction = 1.0;
};

/// First exit (in graph order) whose confidence clears its threshold;
/// otherwise the final classifier. cost_fractions has B+1 entries.
ExitDecision decide(const ExitPolicy& policy, std::span<const double> confidences,
                    std::span<const std::size_t> exit_predictions, std::size_t final_prediction,
                    double final_confidence, std::span<const double> cost_fractions);

struct HeuristicThresholds {
  std::vector<double> thresholds;  // inside (0,1)
  std::vector<double> raw;         // 1 - ACC/ECE before normalization
  bool ece_floored = false;        // some ECE hit the division guard
  bool degenerate = false;         // single exit; normalization collapses to 0.5
};

/// raw_b = 1 - ACC_b / max(ECE_b, ECE_FLOOR), then epsilon-padded min-max
/// normalization into (0,1). Order of raw values is preserved.
HeuristicThresholds heuristic_thresholds(std::span<const double> accuracies,
                                         std::span<const double> calibration_errors,
                                         double epsilon);
HeuristicThresholds heuristic_thresholds(const CalibrationTable& table,
                                         double epsilon = DEFAULT_HEURISTIC_EPSILON);

struct PercentileCandidates {
  std::vector<std::vector<double>> per_exit;  // deduplicated, ascending
  bool coarse = false;  // some exit had fewer samples than the decile resolution
};

/// Nearest-rank deciles (10th..90th) of each exit's validation confidences,
/// clamped into (0,1).
PercentileCandidates percentile_candidates(const std::vector<std::vector<double>>& msps_per_exit);

/// Evaluates a full threshold vector; returns (accuracy, latency reduction).
using ThresholdEvaluator = std::function<std::pair<double, double>(std::span<const double>)>;
/// Evaluates one global threshold.
using GlobalEvaluator = std::function<std::pair<double, double>(double)>;

struct SearchPoint {
  std::vector<double> thresholds;
  double accuracy = 0.0;
  double latency_reduction = 0.0;
  bool pareto = false;
};

/// Samples min(budget, grid size) distinct combinations from the candidate
/// product grid, uniformly without replacement (exhaustive when the grid is
/// small enough). Deterministic given seed.
std::vector<SearchPoint> random_multi_search(const std::vector<std::vector<double>>& candidates,
                                             std::size_t budget,
                                             const ThresholdEvaluator& evaluator,
                                             std::uint64_t seed);

struct SweepPoint {
  double tau = 0.0;
  double accuracy = 0.0;
  double latency_reduction = 0.0;
};

/// tau in {step, 2 step, ..., 1-step} plus clamped endpoints {0.001, 0.999}.
std::vector<SweepPoint> global_sweep(double step, const GlobalEvaluator& evaluator);

}  // namespace mexit
