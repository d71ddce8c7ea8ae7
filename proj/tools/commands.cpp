#include "commands.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include "json.hpp"
#include "mexit/calibration.hpp"
#include "mexit/checkpoint.hpp"
#include "mexit/errors.hpp"
#include "mexit/evaluation.hpp"
#include "mexit/pareto.hpp"
#include "mexit/policy.hpp"

namespace mexit::cli {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw invalid_input(message);
}

Dataset load_data(const Paths& paths) {
  require(!paths.data.empty(), "missing --data (dataset directory)");
  return load_dataset(paths.data);
}

std::span<const MultimodalSample> split_of(const Dataset& data, const std::string& name) {
  if (name == "train") return data.train;
  if (name == "val") return data.val;
  if (name == "test") return data.test;
  throw invalid_input("unknown split '" + name + "' (expected train/val/test)");
}

TrainStrategy make_strategy(const RunConfig& config) {
  const StrategyKind kind = parse_strategy(config.strategy);
  TrainStrategy strategy{kind, kind == StrategyKind::WeightedEntropyReg ? 0.5 : config.gamma};
  if (kind == StrategyKind::Uniform) strategy.gamma = 0.0;
  strategy.validate();
  return strategy;
}

std::optional<CalibrationTable> maybe_table(const Paths& paths) {
  if (paths.no_calibration) return std::nullopt;
  require(!paths.calibration.empty(),
          "missing --calibration (pass --no-calibration to use raw confidences)");
  return load_calibration(paths.calibration);
}

// Evaluation inputs come either from checkpoint+data or from a logit trace.
struct EvalBundle {
  std::optional<MultiExitNetwork> net;
  std::optional<Dataset> data;
  std::optional<LogitTrace> trace;
  std::optional<CalibrationTable> table;
  std::vector<std::string> anchor_names;  // exits then "FinalClassifier"

  PolicyEvaluator evaluator(const RunConfig& config, const std::string& split) const {
    const CalibrationTable* t = table.has_value() ? &*table : nullptr;
    if (trace.has_value()) return PolicyEvaluator(*trace, t);
    return PolicyEvaluator(*net, split_of(*data, split), CostModel::parse(config.cost_model), t);
  }
};

EvalBundle make_bundle(const RunConfig& config, const Paths& paths, bool with_table) {
  EvalBundle bundle;
  if (with_table) bundle.table = maybe_table(paths);
  if (!paths.trace.empty()) {
    bundle.trace = load_logit_trace(paths.trace);
    bundle.anchor_names = bundle.trace->anchors;
  } else {
    require(!paths.checkpoint.empty(), "missing --checkpoint (or --trace)");
    bundle.net = load_checkpoint(paths.checkpoint);
    bundle.data = load_data(paths);
    for (const AnchorPoint& a : bundle.net->anchors()) bundle.anchor_names.push_back(a.str());
  }
  bundle.anchor_names.push_back("FinalClassifier");
  (void)config;
  return bundle;
}

std::vector<SearchPoint> sweep_as_points(const std::vector<SweepPoint>& sweep) {
  std::vector<SearchPoint> points;
  points.reserve(sweep.size());
  for (const SweepPoint& p : sweep) {
    points.push_back({{p.tau}, p.accuracy, p.latency_reduction, false});
  }
  std::vector<std::pair<double, double>> coords;
  for (const SearchPoint& p : points) coords.emplace_back(p.latency_reduction, p.accuracy);
  const auto keep = nondominated(coords);
  for (std::size_t i = 0; i < points.size(); ++i) points[i].pareto = keep[i];
  return points;
}

ExitPolicy policy_for_evaluate(const RunConfig& config, const Paths& paths) {
  if (!paths.policy.empty()) return load_policy(paths.policy);
  return ExitPolicy::global(config.tau);
}

void print_metrics(const std::string& label, const EvalMetrics& metrics) {
  std::cout << label << ": accuracy " << format_double(metrics.accuracy)
            << ", latency reduction " << format_double(metrics.latency_reduction) << "\n";
}

}  // namespace

int cmd_gen_data(const RunConfig& config, const Paths& paths) {
  require(!paths.out.empty(), "missing --out (dataset directory)");
  DatasetSpec spec = config.dataset;
  spec.seed = config.seed;
  const Dataset data = generate_synthetic(spec);
  save_dataset(data, paths.out);
  std::cout << "wrote " << data.train.size() << "/" << data.val.size() << "/" << data.test.size()
            << " train/val/test samples to " << paths.out << "\n";
  return 0;
}

int cmd_train(const RunConfig& config, const Paths& paths) {
  require(!paths.out.empty(), "missing --out (checkpoint path)");
  const Dataset data = load_data(paths);

  BackboneConfig backbone = config.backbone;
  backbone.text_dim = data.spec.text_dim;  // modality dims and K follow the dataset
  backbone.vision_dim = data.spec.vision_dim;
  backbone.classes = data.spec.classes;

  MultiExitNetwork net = MultiExitNetwork::build(backbone, ExitPlacement::parse(config.placement),
                                                 parse_head_kind(config.head), config.seed);
  TrainConfig tc = config.train;
  tc.seed = config.seed;

  const TrainHistory history = train(net, data, make_strategy(config), tc);
  save_checkpoint(net, paths.out);
  if (!paths.history.empty()) save_history(history, paths.history);

  const EpochRecord& last = history.epochs.back();
  std::cout << "trained " << net.exit_count() << "-exit network (" << config.placement << ", "
            << config.head << ", " << config.strategy << ")\n";
  std::cout << "validation accuracy per exit:";
  for (std::size_t b = 0; b < last.val_exit_accuracy.size(); ++b) {
    std::cout << " " << net.anchors()[b].str() << "=" << format_double(last.val_exit_accuracy[b]);
  }
  std::cout << " final=" << format_double(last.val_final_accuracy) << "\n";
  std::cout << "checkpoint written to " << paths.out << "\n";
  return 0;
}

int cmd_calibrate(const RunConfig& config, const Paths& paths) {
  require(!paths.out.empty(), "missing --out (calibration table path)");
  CalibrationTable table;
  if (!paths.trace.empty()) {
    table = calibrate_from_trace(load_logit_trace(paths.trace), config.calibration_bins);
  } else {
    require(!paths.checkpoint.empty(), "missing --checkpoint (or --trace)");
    const MultiExitNetwork net = load_checkpoint(paths.checkpoint);
    const Dataset data = load_data(paths);
    table = per_exit_calibrate(net, data.val, config.calibration_bins);
  }
  save_calibration(table, paths.out);
  for (const CalibrationEntry& e : table.exits) {
    std::cout << e.anchor << ": T=" << format_double(e.temperature)
              << " acc=" << format_double(e.accuracy) << " ece=" << format_double(e.ece) << "\n";
  }
  std::cout << "calibration table written to " << paths.out << "\n";
  return 0;
}

int cmd_sweep_global(const RunConfig& config, const Paths& paths) {
  require(!paths.out.empty(), "missing --out (CSV path)");
  const EvalBundle bundle = make_bundle(config, paths, true);
  const PolicyEvaluator eval = bundle.evaluator(config, paths.split);
  const auto sweep = global_sweep(config.sweep_step,
                                  [&](double tau) { return eval.global_metrics(tau); });
  write_threshold_csv(paths.out, sweep_as_points(sweep));
  std::cout << "swept " << sweep.size() << " global thresholds -> " << paths.out << "\n";
  return 0;
}

int cmd_search_multi(const RunConfig& config, const Paths& paths) {
  require(!paths.out.empty(), "missing --out (CSV path)");
  const EvalBundle bundle = make_bundle(config, paths, true);
  // candidates come from the validation confidences; the search scores there too
  const std::string split = paths.trace.empty() ? "val" : paths.split;
  const PolicyEvaluator eval = bundle.evaluator(config, split);
  const PercentileCandidates candidates = percentile_candidates(eval.confidences_per_exit());
  if (candidates.coarse) {
    std::cout << "warning: fewer samples than decile resolution, using a coarser grid\n";
  }
  const auto points = random_multi_search(
      candidates.per_exit, config.search_budget,
      [&](std::span<const double> taus) { return eval.thresholds_metrics(taus); }, config.seed);
  write_threshold_csv(paths.out, points);
  std::size_t front = 0;
  for (const SearchPoint& p : points) front += p.pareto ? 1 : 0;
  std::cout << "evaluated " << points.size() << " threshold combinations (" << front
            << " on the Pareto front) -> " << paths.out << "\n";
  return 0;
}

int cmd_heuristic(const RunConfig& config, const Paths& paths) {
  require(!paths.out.empty(), "missing --out (CSV path)");
  require(!paths.calibration.empty(), "missing --calibration (heuristic needs ACC/ECE per exit)");
  const CalibrationTable table = load_calibration(paths.calibration);
  const HeuristicThresholds h = heuristic_thresholds(table, config.epsilon);
  if (h.ece_floored) {
    std::cout << "warning: some exits hit the ECE floor of " << ECE_FLOOR << "\n";
  }
  if (h.degenerate) std::cout << "warning: single exit, threshold fixed at 0.5\n";

  const ExitPolicy policy = ExitPolicy::heuristic(config.epsilon, h.thresholds);
  if (!paths.policy.empty()) save_policy(policy, paths.policy);

  Paths eval_paths = paths;
  eval_paths.no_calibration = false;
  const EvalBundle bundle = make_bundle(config, eval_paths, true);
  const PolicyEvaluator eval = bundle.evaluator(config, paths.split);
  const EvalMetrics metrics = eval.policy_metrics(policy);

  const PolicyRow row{"heuristic", "heuristic", join_thresholds(h.thresholds), metrics.accuracy,
                      metrics.latency_reduction, metrics.exit_histogram};
  write_policy_csv(paths.out, std::span<const PolicyRow>(&row, 1));
  print_metrics("heuristic policy", metrics);
  std::cout << "thresholds:";
  for (double t : h.thresholds) std::cout << " " << format_double(t);
  std::cout << "\nresults -> " << paths.out << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& config, const Paths& paths) {
  const EvalBundle bundle = make_bundle(config, paths, true);
  const PolicyEvaluator eval = bundle.evaluator(config, paths.split);
  const ExitPolicy policy = policy_for_evaluate(config, paths);
  const EvalMetrics metrics = eval.policy_metrics(policy);
  print_metrics(policy.kind_str() + " policy on " + paths.split, metrics);

  if (!paths.out.empty()) {
    json j;
    j["policy"] = {{"kind", policy.kind_str()}};
    if (policy.kind == ExitPolicy::Kind::Global) {
      j["policy"]["tau"] = policy.global_tau;
    } else {
      j["policy"]["thresholds"] = policy.thresholds;
    }
    j["split"] = paths.split;
    j["accuracy"] = metrics.accuracy;
    j["latency_reduction"] = metrics.latency_reduction;
    j["final_accuracy"] = metrics.final_accuracy;
    j["exit_histogram"] = metrics.exit_histogram;
    j["anchors"] = bundle.anchor_names;
    std::ofstream out(paths.out);
    if (!out) throw format_error("evaluate: cannot open '" + paths.out + "' for writing");
    out << j.dump(2) << "\n";
    std::cout << "metrics -> " << paths.out << "\n";
  }
  return 0;
}

int cmd_exit_patterns(const RunConfig& config, const Paths& paths) {
  require(!paths.out.empty(), "missing --out (CSV path)");
  const EvalBundle bundle = make_bundle(config, paths, true);
  const PolicyEvaluator eval = bundle.evaluator(config, paths.split);
  const ExitPolicy policy = policy_for_evaluate(config, paths);
  const EvalMetrics metrics = eval.policy_metrics(policy);
  write_pattern_csv(paths.out, metrics.pattern, bundle.anchor_names, !paths.counts_view);
  std::cout << "exit-pattern matrix (" << (paths.counts_view ? "counts" : "log-normalized")
            << ") -> " << paths.out << "\n";
  return 0;
}

int cmd_compare(const RunConfig& config, const Paths& paths) {
  require(!paths.out.empty(), "missing --out (output directory)");
  require(!paths.checkpoint.empty(), "missing --checkpoint");
  const MultiExitNetwork net = load_checkpoint(paths.checkpoint);
  const Dataset data = load_data(paths);

  CompareConfig cc;
  cc.sweep_step = config.sweep_step;
  cc.budget = config.search_budget;
  cc.epsilon = config.epsilon;
  cc.bins = config.calibration_bins;
  cc.seed = config.seed;

  const CompareReport report =
      compare_policies(net, data, CostModel::parse(config.cost_model), cc, paths.out);
  for (const auto& f : report.files) std::cout << "wrote " << f.string() << "\n";
  return 0;
}

int cmd_dump_trace(const RunConfig& config, const Paths& paths) {
  require(!paths.out.empty(), "missing --out (trace path)");
  require(!paths.checkpoint.empty(), "missing --checkpoint");
  const MultiExitNetwork net = load_checkpoint(paths.checkpoint);
  const Dataset data = load_data(paths);
  const auto split = split_of(data, paths.split);
  const CostModel cm = CostModel::parse(config.cost_model);

  LogitTrace trace;
  trace.exit_count = net.exit_count();
  trace.classes = net.config().classes;
  for (const AnchorPoint& a : net.anchors()) trace.anchors.push_back(a.str());
  for (const MultimodalSample& s : split) {
    const ForwardTrace t = net.forward_full(s, cm);
    LogitTraceRecord r;
    for (const ExitRecord& e : t.exits) {
      r.exit_logits.push_back(e.logits);
      if (e.gate_logit.has_value()) r.gate_logits.push_back(*e.gate_logit);
    }
    r.final_logits = t.final_logits;
    r.label = s.label;
    r.cost_fractions = t.cost_fractions;
    trace.records.push_back(std::move(r));
  }
  save_logit_trace(trace, paths.out);
  std::cout << "dumped " << trace.records.size() << " records (" << paths.split << ") -> "
            << paths.out << "\n";
  return 0;
}

}  // namespace mexit::cli
