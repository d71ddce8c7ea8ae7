#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mexit/calibration.hpp"
#include "mexit/cost_model.hpp"
#include "mexit/data.hpp"
#include "mexit/model.hpp"
#include "mexit/policy.hpp"

namespace mexit {

struct ParetoPoint {
  double accuracy = 0.0;
  double latency_reduction = 0.0;
  std::string descriptor;
};

/// Weak-dominance filter; result ordered by latency reduction (stable).
std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points);

struct ExitPatternMatrix {
  std::size_t classes = 0;
  std::size_t columns = 0;  // exits in graph order, then the final classifier
  std::vector<std::vector<std::size_t>> counts;  // correct predictions per (class, column)

  /// log1p of counts, rows normalized to sum 1 (all-zero rows stay zero).
  std::vector<std::vector<double>> log_normalized() const;
};

ExitPatternMatrix exit_pattern_matrix(std::span<const ExitDecision> decisions,
                                      std::span<const std::size_t> labels, std::size_t classes,
                                      std::size_t columns);

struct EvalMetrics {
  double accuracy = 0.0;
  double latency_reduction = 0.0;
  double final_accuracy = 0.0;  // accuracy of the final classifier alone
  std::vector<std::size_t> exit_histogram;  // length columns
  ExitPatternMatrix pattern;
};

/// Per-sample confidences, predictions and costs precomputed once so that
/// threshold vectors evaluate in O(samples x exits).
///
/// Ramp exits score with the (optionally temperature-scaled) MSP of the exit
/// logits; gate exits score with the scaled gate probability while the paired
/// head supplies the prediction. Calibration never changes a prediction.
class PolicyEvaluator {
 public:
  PolicyEvaluator(const MultiExitNetwork& net, std::span<const MultimodalSample> split,
                  const CostModel& cost_model, const CalibrationTable* table = nullptr);
  /// Trace-driven variant; records must carry cost fractions.
  PolicyEvaluator(const LogitTrace& trace, const CalibrationTable* table = nullptr);

  std::size_t exit_count() const { return exits_; }
  std::size_t classes() const { return classes_; }
  std::size_t size() const { return labels_.size(); }

  /// (accuracy, mean latency reduction) under per-exit thresholds.
  std::pair<double, double> thresholds_metrics(std::span<const double> taus) const;
  std::pair<double, double> global_metrics(double tau) const;

  /// Accuracy when every sample runs to the final classifier.
  double final_accuracy() const;

  std::vector<ExitDecision> decisions(const ExitPolicy& policy) const;
  EvalMetrics policy_metrics(const ExitPolicy& policy) const;

  /// [exit][sample] confidences, e.g. for percentile candidate grids.
  std::vector<std::vector<double>> confidences_per_exit() const;

  std::span<const std::size_t> labels() const { return labels_; }

 private:
  void validate_table(const CalibrationTable* table) const;
  double cost_at(std::size_t sample, std::size_t position) const;

  std::size_t exits_ = 0;
  std::size_t classes_ = 0;
  std::vector<std::size_t> labels_;
  std::vector<double> conf_;         // [sample * exits + b]
  std::vector<std::size_t> preds_;   // [sample * exits + b]
  std::vector<std::size_t> final_preds_;
  std::vector<double> final_conf_;
  std::vector<double> shared_costs_;       // length exits+1 when costs are shared
  std::vector<double> per_sample_costs_;   // [sample * (exits+1)] when trace-provided
};

EvalMetrics evaluate(const MultiExitNetwork& net, const ExitPolicy& policy,
                     std::span<const MultimodalSample> split, const CostModel& cost_model,
                     const CalibrationTable* table = nullptr);

// --- CSV emission -----------------------------------------------------------

/// Header: tau_vector,accuracy,latency_reduction,pareto
void write_threshold_csv(const std::filesystem::path& path,
                         std::span<const SearchPoint> points);

struct PolicyRow {
  std::string policy;
  std::string kind;
  std::string tau;  // semicolon-joined thresholds
  double accuracy = 0.0;
  double latency_reduction = 0.0;
  std::vector<std::size_t> exit_histogram;
};

/// Header: policy,kind,tau,accuracy,latency_reduction,exit_histogram
void write_policy_csv(const std::filesystem::path& path, std::span<const PolicyRow> rows);

/// Class rows x exit-anchor columns of an exit-pattern matrix.
void write_pattern_csv(const std::filesystem::path& path, const ExitPatternMatrix& pattern,
                       std::span<const std::string> column_names, bool log_normalized);

std::string format_double(double v);
std::string join_thresholds(std::span<const double> taus);

// --- Policy comparison ------------------------------------------------------

struct CompareConfig {
  double sweep_step = 0.05;
  std::size_t budget = DEFAULT_SEARCH_BUDGET;
  double epsilon = DEFAULT_HEURISTIC_EPSILON;
  std::size_t bins = DEFAULT_ECE_BINS;
  std::uint64_t seed = 0;
};

struct CompareReport {
  std::vector<std::filesystem::path> files;
  CalibrationTable table;
};

/// Runs the four standard policies (global sweep uncalibrated and calibrated,
/// multi-exit random search, heuristic) and emits one CSV per policy plus a
/// merged Pareto CSV. Thresholds are fit on validation; CSV metrics are on
/// the test split except the search stream, which reports its validation
/// search results.
CompareReport compare_policies(const MultiExitNetwork& net, const Dataset& data,
                               const CostModel& cost_model, const CompareConfig& config,
                               const std::filesystem::path& out_dir);

}  // namespace mexit
