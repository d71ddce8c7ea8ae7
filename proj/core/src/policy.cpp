#include "mexit/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "json.hpp"
#include "mexit/errors.hpp"
#include "mexit/pareto.hpp"
#include "mexit/rng.hpp"

namespace mexit {

using nlohmann::json;

double msp(std::span<const double> probs) {
  if (probs.empty()) throw invalid_input("msp: empty probability vector");
  return *std::max_element(probs.begin(), probs.end());
}

ExitPolicy ExitPolicy::global(double tau) {
  ExitPolicy p;
  p.kind = Kind::Global;
  p.global_tau = tau;
  p.validate();
  return p;
}

ExitPolicy ExitPolicy::multi(std::vector<double> thresholds) {
  ExitPolicy p;
  p.kind = Kind::MultiExit;
  p.thresholds = std::move(thresholds);
  p.validate();
  return p;
}

ExitPolicy ExitPolicy::heuristic(double epsilon, std::vector<double> thresholds) {
  ExitPolicy p;
  p.kind = Kind::Heuristic;
  p.epsilon = epsilon;
  p.thresholds = std::move(thresholds);
  p.validate();
  return p;
}

void ExitPolicy::validate() const {
  auto check = [](double tau) {
    if (!(tau > 0.0 && tau < 1.0)) {
      throw invalid_input("policy: thresholds must lie strictly inside (0,1)");
    }
  };
  if (kind == Kind::Global) {
    check(global_tau);
  } else {
    for (double t : thresholds) check(t);
  }
}

std::vector<double> ExitPolicy::resolve(std::size_t exit_count) const {
  if (kind == Kind::Global) return std::vector<double>(exit_count, global_tau);
  if (thresholds.size() != exit_count) {
    throw invalid_input("policy: threshold vector length does not match exit count");
  }
  return thresholds;
}

std::string ExitPolicy::kind_str() const {
  switch (kind) {
    case Kind::Global: return "global";
    case Kind::MultiExit: return "multi";
    case Kind::Heuristic: return "heuristic";
  }
  return "?";
}

void save_policy(const ExitPolicy& policy, const std::filesystem::path& path) {
  json j;
  j["kind"] = policy.kind_str();
  if (policy.kind == ExitPolicy::Kind::Global) {
    j["tau"] = policy.global_tau;
  } else {
    j["thresholds"] = policy.thresholds;
    if (policy.kind == ExitPolicy::Kind::Heuristic) j["epsilon"] = policy.epsilon;
  }
  std::ofstream out(path);
  if (!out) throw format_error("policy: cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << "\n";
}

ExitPolicy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw format_error("policy: cannot open '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw format_error("policy '" + path.string() + "': " + e.what());
  }
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "global") return ExitPolicy::global(j.at("tau").get<double>());
    if (kind == "multi") {
      return ExitPolicy::multi(j.at("thresholds").get<std::vector<double>>());
    }
    if (kind == "heuristic") {
      return ExitPolicy::heuristic(j.value("epsilon", DEFAULT_HEURISTIC_EPSILON),
                                   j.at("thresholds").get<std::vector<double>>());
    }
    throw format_error("policy: unknown kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw format_error("policy '" + path.string() + "': " + e.what());
  }
}

ExitDecision decide(const ExitPolicy& policy, std::span<const double> confidences,
                    std::span<const std::size_t> exit_predictions, std::size_t final_prediction,
                    double final_confidence, std::span<const double> cost_fractions) {
  if (confidences.size() != exit_predictions.size()) {
    throw invalid_input("decide: confidences and predictions are misaligned");
  }
  if (cost_fractions.size() != confidences.size() + 1) {
    throw invalid_input("decide: cost fractions must have one entry per exit plus the final");
  }
  const std::vector<double> taus = policy.resolve(confidences.size());
  for (std::size_t b = 0; b < confidences.size(); ++b) {
    if (confidences[b] >= taus[b]) {
      return {b, false, exit_predictions[b], confidences[b], cost_fractions[b]};
    }
  }
  return {confidences.size(), true, final_prediction, final_confidence,
          cost_fractions[confidences.size()]};
}

HeuristicThresholds heuristic_thresholds(std::span<const double> accuracies,
                                         std::span<const double> calibration_errors,
                                         double epsilon) {
  if (accuracies.size() != calibration_errors.size() || accuracies.empty()) {
    throw invalid_input("heuristic_thresholds: ACC/ECE vectors are misaligned or empty");
  }
  if (!(epsilon > 0.0)) throw invalid_input("heuristic_thresholds: epsilon must be > 0");

  HeuristicThresholds out;
  out.raw.resize(accuracies.size());
  for (std::size_t b = 0; b < accuracies.size(); ++b) {
    double e = calibration_errors[b];
    if (e < ECE_FLOOR) {
      e = ECE_FLOOR;
      out.ece_floored = true;
    }
    out.raw[b] = 1.0 - accuracies[b] / e;
  }

  if (out.raw.size() == 1) {
    out.degenerate = true;
    out.thresholds = {0.5};
    return out;
  }

  const auto [mn_it, mx_it] = std::minmax_element(out.raw.begin(), out.raw.end());
  const double lo = *mn_it - epsilon;
  const double hi = *mx_it + epsilon;
  out.thresholds.resize(out.raw.size());
  for (std::size_t b = 0; b < out.raw.size(); ++b) {
    out.thresholds[b] = (out.raw[b] - lo) / (hi - lo);
  }
  return out;
}

HeuristicThresholds heuristic_thresholds(const CalibrationTable& table, double epsilon) {
  std::vector<double> acc, err;
  for (const CalibrationEntry& e : table.exits) {
    acc.push_back(e.accuracy);
    err.push_back(e.ece);
  }
  return heuristic_thresholds(acc, err, epsilon);
}

PercentileCandidates percentile_candidates(
    const std::vector<std::vector<double>>& msps_per_exit) {
  if (msps_per_exit.empty()) throw invalid_input("percentile_candidates: no exits");
  PercentileCandidates out;
  for (const std::vector<double>& msps : msps_per_exit) {
    if (msps.empty()) throw invalid_input("percentile_candidates: exit with no samples");
    std::vector<double> sorted = msps;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();

    std::vector<double> cands;
    if (n < 10) {
      out.coarse = true;  // fall back to the distinct observed values
      cands = sorted;
    } else {
      for (std::size_t p = 10; p <= 90; p += 10) {
        const std::size_t rank = (p * n + 99) / 100;  // nearest-rank, 1-based
        cands.push_back(sorted[rank - 1]);
      }
    }
    for (double& c : cands) c = std::clamp(c, SWEEP_ENDPOINT_LOW, SWEEP_ENDPOINT_HIGH);
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    out.per_exit.push_back(std::move(cands));
  }
  return out;
}

namespace {

std::vector<double> decode_combination(std::uint64_t index,
                                       const std::vector<std::vector<double>>& candidates) {
  std::vector<double> tau(candidates.size());
  for (std::size_t b = 0; b < candidates.size(); ++b) {
    const std::uint64_t n = candidates[b].size();
    tau[b] = candidates[b][index % n];
    index /= n;
  }
  return tau;
}

}  // namespace

std::vector<SearchPoint> random_multi_search(const std::vector<std::vector<double>>& candidates,
                                             std::size_t budget,
                                             const ThresholdEvaluator& evaluator,
                                             std::uint64_t seed) {
  if (candidates.empty()) throw invalid_input("random_multi_search: empty candidate grid");
  if (budget < 1) throw invalid_input("random_multi_search: budget must be >= 1");
  for (const auto& c : candidates) {
    if (c.empty()) throw invalid_input("random_multi_search: exit with no candidates");
  }

  // Saturating grid size; anything past ~4e18 is effectively infinite here.
  constexpr std::uint64_t HUGE_GRID = UINT64_MAX / 4;
  std::uint64_t total = 1;
  for (const auto& c : candidates) {
    if (total > HUGE_GRID / c.size()) {
      total = HUGE_GRID;
      break;
    }
    total *= c.size();
  }

  const std::uint64_t m = std::min<std::uint64_t>(budget, total);
  std::vector<std::uint64_t> picks;
  picks.reserve(m);

  if (total <= budget) {
    for (std::uint64_t i = 0; i < total; ++i) picks.push_back(i);  // exhaustive
  } else {
    Rng rng = Rng::substream(seed, "search");
    if (total <= 4 * static_cast<std::uint64_t>(budget)) {
      std::vector<std::uint64_t> all(total);
      for (std::uint64_t i = 0; i < total; ++i) all[i] = i;
      for (std::uint64_t i = 0; i < m; ++i) {
        const std::uint64_t j = i + rng.below(total - i);
        std::swap(all[i], all[j]);
        picks.push_back(all[i]);
      }
    } else {
      std::unordered_set<std::uint64_t> seen;
      while (picks.size() < m) {
        const std::uint64_t idx = rng.below(total);
        if (seen.insert(idx).second) picks.push_back(idx);
      }
    }
  }

  std::vector<SearchPoint> points;
  points.reserve(picks.size());
  for (std::uint64_t idx : picks) {
    SearchPoint p;
    p.thresholds = decode_combination(idx, candidates);
    const auto [acc, lat] = evaluator(p.thresholds);
    p.accuracy = acc;
    p.latency_reduction = lat;
    points.push_back(std::move(p));
  }

  std::vector<std::pair<double, double>> coords;
  coords.reserve(points.size());
  for (const SearchPoint& p : points) coords.emplace_back(p.latency_reduction, p.accuracy);
  const std::vector<bool> keep = nondominated(coords);
  for (std::size_t i = 0; i < points.size(); ++i) points[i].pareto = keep[i];
  return points;
}

std::vector<SweepPoint> global_sweep(double step, const GlobalEvaluator& evaluator) {
  if (!(step > 0.0 && step < 1.0)) {
    throw invalid_input("global_sweep: step must lie strictly inside (0,1)");
  }
  std::vector<double> taus{SWEEP_ENDPOINT_LOW};
  const auto kmax = static_cast<std::size_t>(std::floor((1.0 - step) / step + 1e-9));
  for (std::size_t k = 1; k <= kmax; ++k) taus.push_back(static_cast<double>(k) * step);
  taus.push_back(SWEEP_ENDPOINT_HIGH);

  std::vector<SweepPoint> out;
  out.reserve(taus.size());
  for (double tau : taus) {
    const auto [acc, lat] = evaluator(tau);
    out.push_back({tau, acc, lat});
  }
  return out;
}

}  // namespace mexit
