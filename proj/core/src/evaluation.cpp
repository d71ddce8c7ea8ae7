#include "mexit/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mexit/errors.hpp"
#include "mexit/ops.hpp"
#include "mexit/pareto.hpp"

namespace mexit {

std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points) {
  std::vector<std::pair<double, double>> coords;
  coords.reserve(points.size());
  for (const ParetoPoint& p : points) coords.emplace_back(p.latency_reduction, p.accuracy);
  const std::vector<bool> keep = nondominated(coords);

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (keep[i]) kept.push_back(i);
  }
  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    return points[a].latency_reduction < points[b].latency_reduction;
  });
  std::vector<ParetoPoint> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(points[i]);
  return out;
}

ExitPatternMatrix exit_pattern_matrix(std::span<const ExitDecision> decisions,
                                      std::span<const std::size_t> labels, std::size_t classes,
                                      std::size_t columns) {
  if (decisions.size() != labels.size()) {
    throw invalid_input("exit_pattern_matrix: decisions and labels are misaligned");
  }
  ExitPatternMatrix m;
  m.classes = classes;
  m.columns = columns;
  m.counts.assign(classes, std::vector<std::size_t>(columns, 0));
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (labels[i] >= classes) throw invalid_input("exit_pattern_matrix: unknown class label");
    if (decisions[i].exit_index >= columns) {
      throw invalid_input("exit_pattern_matrix: exit index out of range");
    }
    if (decisions[i].predicted_class == labels[i]) {
      m.counts[labels[i]][decisions[i].exit_index] += 1;
    }
  }
  return m;
}

std::vector<std::vector<double>> ExitPatternMatrix::log_normalized() const {
  std::vector<std::vector<double>> out(classes, std::vector<double>(columns, 0.0));
  for (std::size_t c = 0; c < classes; ++c) {
    double row_sum = 0.0;
    for (std::size_t e = 0; e < columns; ++e) {
      out[c][e] = std::log1p(static_cast<double>(counts[c][e]));
      row_sum += out[c][e];
    }
    if (row_sum > 0.0) {
      for (double& v : out[c]) v /= row_sum;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PolicyEvaluator

void PolicyEvaluator::validate_table(const CalibrationTable* table) const {
  if (table != nullptr && table->exits.size() != exits_) {
    throw invalid_input("evaluate: calibration table does not match the exit count");
  }
}

PolicyEvaluator::PolicyEvaluator(const MultiExitNetwork& net,
                                 std::span<const MultimodalSample> split,
                                 const CostModel& cost_model, const CalibrationTable* table) {
  if (split.empty()) throw invalid_input("evaluate: empty split");
  exits_ = net.exit_count();
  classes_ = net.config().classes;
  validate_table(table);
  shared_costs_ = net.cost_fractions(cost_model);

  const bool gates = net.head_kind() == ExitHeadKind::Gate;
  labels_.reserve(split.size());
  conf_.reserve(split.size() * exits_);
  preds_.reserve(split.size() * exits_);

  for (const MultimodalSample& s : split) {
    const ForwardTrace trace = net.forward_full(s, cost_model);
    labels_.push_back(s.label);
    for (std::size_t b = 0; b < exits_; ++b) {
      const ExitRecord& exit = trace.exits[b];
      preds_.push_back(argmax(exit.logits));
      if (gates) {
        const double t = table != nullptr ? table->exits[b].temperature : 1.0;
        conf_.push_back(sigmoid(*exit.gate_logit / t));
      } else {
        const double t = table != nullptr ? table->exits[b].temperature : 1.0;
        conf_.push_back(msp(apply_temperature(exit.logits, t)));
      }
    }
    final_preds_.push_back(argmax(trace.final_logits));
    const double t_final =
        table != nullptr && table->final_entry.has_value() ? table->final_entry->temperature : 1.0;
    final_conf_.push_back(msp(apply_temperature(trace.final_logits, t_final)));
  }
}

PolicyEvaluator::PolicyEvaluator(const LogitTrace& trace, const CalibrationTable* table) {
  if (trace.records.empty()) throw invalid_input("evaluate: empty logit trace");
  exits_ = trace.exit_count;
  classes_ = trace.classes;
  validate_table(table);

  for (const LogitTraceRecord& r : trace.records) {
    if (r.cost_fractions.empty()) {
      throw invalid_input(
          "evaluate: logit trace records carry no cost fractions; latency metrics need them");
    }
    labels_.push_back(r.label);
    const bool gates = !r.gate_logits.empty();
    for (std::size_t b = 0; b < exits_; ++b) {
      preds_.push_back(argmax(r.exit_logits[b]));
      if (gates) {
        const double t = table != nullptr ? table->exits[b].temperature : 1.0;
        conf_.push_back(sigmoid(r.gate_logits[b] / t));
      } else {
        const double t = table != nullptr ? table->exits[b].temperature : 1.0;
        conf_.push_back(msp(apply_temperature(r.exit_logits[b], t)));
      }
    }
    final_preds_.push_back(argmax(r.final_logits));
    const double t_final =
        table != nullptr && table->final_entry.has_value() ? table->final_entry->temperature : 1.0;
    final_conf_.push_back(msp(apply_temperature(r.final_logits, t_final)));
    for (double c : r.cost_fractions) per_sample_costs_.push_back(c);
  }
}

double PolicyEvaluator::cost_at(std::size_t sample, std::size_t position) const {
  if (!per_sample_costs_.empty()) return per_sample_costs_[sample * (exits_ + 1) + position];
  return shared_costs_[position];
}

std::pair<double, double> PolicyEvaluator::thresholds_metrics(std::span<const double> taus) const {
  if (taus.size() != exits_) {
    throw invalid_input("evaluate: threshold vector length does not match exit count");
  }
  const std::size_t n = labels_.size();
  std::size_t correct = 0;
  double latency = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* conf = conf_.data() + i * exits_;
    const std::size_t* preds = preds_.data() + i * exits_;
    std::size_t chosen = exits_;
    std::size_t pred = final_preds_[i];
    for (std::size_t b = 0; b < exits_; ++b) {
      if (conf[b] >= taus[b]) {
        chosen = b;
        pred = preds[b];
        break;
      }
    }
    correct += pred == labels_[i] ? 1 : 0;
    latency += 1.0 - cost_at(i, chosen);
  }
  return {static_cast<double>(correct) / static_cast<double>(n),
          latency / static_cast<double>(n)};
}

std::pair<double, double> PolicyEvaluator::global_metrics(double tau) const {
  const std::vector<double> taus(exits_, tau);
  return thresholds_metrics(taus);
}

double PolicyEvaluator::final_accuracy() const {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    correct += final_preds_[i] == labels_[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels_.size());
}

std::vector<ExitDecision> PolicyEvaluator::decisions(const ExitPolicy& policy) const {
  policy.validate();
  std::vector<ExitDecision> out;
  out.reserve(labels_.size());
  std::vector<double> costs(exits_ + 1);
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    for (std::size_t p = 0; p <= exits_; ++p) costs[p] = cost_at(i, p);
    const std::span<const double> conf(conf_.data() + i * exits_, exits_);
    const std::span<const std::size_t> preds(preds_.data() + i * exits_, exits_);
    out.push_back(decide(policy, conf, preds, final_preds_[i], final_conf_[i], costs));
  }
  return out;
}

EvalMetrics PolicyEvaluator::policy_metrics(const ExitPolicy& policy) const {
  const std::vector<ExitDecision> decs = decisions(policy);
  EvalMetrics m;
  m.exit_histogram.assign(exits_ + 1, 0);
  std::size_t correct = 0;
  double latency = 0.0;
  for (std::size_t i = 0; i < decs.size(); ++i) {
    m.exit_histogram[decs[i].exit_index] += 1;
    correct += decs[i].predicted_class == labels_[i] ? 1 : 0;
    latency += 1.0 - decs[i].cost_fraction;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(decs.size());
  m.latency_reduction = latency / static_cast<double>(decs.size());
  m.final_accuracy = final_accuracy();
  m.pattern = exit_pattern_matrix(decs, labels_, classes_, exits_ + 1);
  return m;
}

std::vector<std::vector<double>> PolicyEvaluator::confidences_per_exit() const {
  std::vector<std::vector<double>> out(exits_);
  for (std::size_t b = 0; b < exits_; ++b) {
    out[b].reserve(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) out[b].push_back(conf_[i * exits_ + b]);
  }
  return out;
}

EvalMetrics evaluate(const MultiExitNetwork& net, const ExitPolicy& policy,
                     std::span<const MultimodalSample> split, const CostModel& cost_model,
                     const CalibrationTable* table) {
  return PolicyEvaluator(net, split, cost_model, table).policy_metrics(policy);
}

// ---------------------------------------------------------------------------
// CSV emission

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string join_thresholds(std::span<const double> taus) {
  std::string out;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (i > 0) out += ";";
    out += format_double(taus[i]);
  }
  return out;
}

namespace {

std::string join_histogram(std::span<const std::size_t> histogram) {
  std::string out;
  for (std::size_t i = 0; i < histogram.size(); ++i) {
    if (i > 0) out += ";";
    out += std::to_string(histogram[i]);
  }
  return out;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw format_error("csv: cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

void write_threshold_csv(const std::filesystem::path& path,
                         std::span<const SearchPoint> points) {
  std::ofstream out = open_csv(path);
  out << "tau_vector,accuracy,latency_reduction,pareto\n";
  for (const SearchPoint& p : points) {
    out << join_thresholds(p.thresholds) << "," << format_double(p.accuracy) << ","
        << format_double(p.latency_reduction) << "," << (p.pareto ? 1 : 0) << "\n";
  }
  if (!out.good()) throw format_error("csv: write failed for '" + path.string() + "'");
}

void write_policy_csv(const std::filesystem::path& path, std::span<const PolicyRow> rows) {
  std::ofstream out = open_csv(path);
  out << "policy,kind,tau,accuracy,latency_reduction,exit_histogram\n";
  for (const PolicyRow& r : rows) {
    out << r.policy << "," << r.kind << "," << r.tau << "," << format_double(r.accuracy) << ","
        << format_double(r.latency_reduction) << "," << join_histogram(r.exit_histogram) << "\n";
  }
  if (!out.good()) throw format_error("csv: write failed for '" + path.string() + "'");
}

void write_pattern_csv(const std::filesystem::path& path, const ExitPatternMatrix& pattern,
                       std::span<const std::string> column_names, bool log_normalized) {
  if (column_names.size() != pattern.columns) {
    throw invalid_input("pattern csv: column names do not match matrix width");
  }
  std::ofstream out = open_csv(path);
  out << "class";
  for (const std::string& name : column_names) out << "," << name;
  out << "\n";
  const auto normalized = log_normalized ? pattern.log_normalized()
                                         : std::vector<std::vector<double>>{};
  for (std::size_t c = 0; c < pattern.classes; ++c) {
    out << c;
    for (std::size_t e = 0; e < pattern.columns; ++e) {
      if (log_normalized) {
        out << "," << format_double(normalized[c][e]);
      } else {
        out << "," << pattern.counts[c][e];
      }
    }
    out << "\n";
  }
  if (!out.good()) throw format_error("csv: write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Policy comparison

CompareReport compare_policies(const MultiExitNetwork& net, const Dataset& data,
                               const CostModel& cost_model, const CompareConfig& config,
                               const std::filesystem::path& out_dir) {
  if (data.val.empty() || data.test.empty()) {
    throw invalid_input("compare_policies: needs nonempty validation and test splits");
  }
  std::filesystem::create_directories(out_dir);

  CompareReport report;
  report.table = per_exit_calibrate(net, data.val, config.bins);
  const CalibrationTable& table = report.table;

  const PolicyEvaluator test_uncal(net, data.test, cost_model, nullptr);
  const PolicyEvaluator test_cal(net, data.test, cost_model, &table);
  const PolicyEvaluator val_cal(net, data.val, cost_model, &table);

  std::vector<PolicyRow> merged_candidates;
  auto global_rows = [&](const PolicyEvaluator& eval, const std::string& name) {
    std::vector<PolicyRow> rows;
    const auto sweep = global_sweep(config.sweep_step,
                                    [&](double tau) { return eval.global_metrics(tau); });
    for (const SweepPoint& p : sweep) {
      const EvalMetrics m = eval.policy_metrics(ExitPolicy::global(p.tau));
      PolicyRow row{name, "global", format_double(p.tau), m.accuracy, m.latency_reduction,
                    m.exit_histogram};
      rows.push_back(row);
      merged_candidates.push_back(row);
    }
    return rows;
  };

  const auto uncal_rows = global_rows(test_uncal, "global-uncalibrated");
  const auto cal_rows = global_rows(test_cal, "global-calibrated");

  const PercentileCandidates candidates = percentile_candidates(val_cal.confidences_per_exit());
  const std::vector<SearchPoint> search = random_multi_search(
      candidates.per_exit, config.budget,
      [&](std::span<const double> taus) { return val_cal.thresholds_metrics(taus); },
      config.seed);
  for (const SearchPoint& p : search) {
    if (!p.pareto) continue;  // re-evaluate the searched front on the test split
    const EvalMetrics m = test_cal.policy_metrics(ExitPolicy::multi(p.thresholds));
    merged_candidates.push_back(PolicyRow{"multi-exit-search", "multi",
                                          join_thresholds(p.thresholds), m.accuracy,
                                          m.latency_reduction, m.exit_histogram});
  }

  const HeuristicThresholds heur = heuristic_thresholds(table, config.epsilon);
  const ExitPolicy heur_policy = ExitPolicy::heuristic(config.epsilon, heur.thresholds);
  const EvalMetrics heur_metrics = test_cal.policy_metrics(heur_policy);
  const PolicyRow heur_row{"heuristic", "heuristic", join_thresholds(heur.thresholds),
                           heur_metrics.accuracy, heur_metrics.latency_reduction,
                           heur_metrics.exit_histogram};
  merged_candidates.push_back(heur_row);

  std::vector<std::pair<double, double>> coords;
  for (const PolicyRow& r : merged_candidates) {
    coords.emplace_back(r.latency_reduction, r.accuracy);
  }
  const std::vector<bool> keep = nondominated(coords);
  std::vector<PolicyRow> merged;
  for (std::size_t i = 0; i < merged_candidates.size(); ++i) {
    if (keep[i]) merged.push_back(merged_candidates[i]);
  }
  std::stable_sort(merged.begin(), merged.end(), [](const PolicyRow& a, const PolicyRow& b) {
    return a.latency_reduction < b.latency_reduction;
  });

  const auto emit_policy = [&](const std::string& name, std::span<const PolicyRow> rows) {
    const auto path = out_dir / (name + ".csv");
    write_policy_csv(path, rows);
    report.files.push_back(path);
  };
  emit_policy("global_uncalibrated", uncal_rows);
  emit_policy("global_calibrated", cal_rows);
  {
    const auto path = out_dir / "multi_exit_search.csv";
    write_threshold_csv(path, search);
    report.files.push_back(path);
  }
  emit_policy("heuristic", std::span<const PolicyRow>(&heur_row, 1));
  emit_policy("pareto_merged", merged);
  return report;
}

}  // namespace mexit
