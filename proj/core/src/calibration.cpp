#include "mexit/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>

#include "json.hpp"
#include "mexit/errors.hpp"
#include "mexit/ops.hpp"

namespace mexit {

using nlohmann::json;

namespace {

// Golden-section over log-spaced temperatures; CE in T is unimodal here.
double golden_section_temperature(const std::function<double(double)>& nll) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = std::log(TEMPERATURE_MIN);
  double hi = std::log(TEMPERATURE_MAX);
  double x1 = hi - phi * (hi - lo);
  double x2 = lo + phi * (hi - lo);
  double f1 = nll(std::exp(x1));
  double f2 = nll(std::exp(x2));
  while (std::exp(hi) - std::exp(lo) > 1e-3) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = nll(std::exp(x1));
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = nll(std::exp(x2));
    }
  }
  return std::exp(0.5 * (lo + hi));
}

TemperatureFit run_fit(const std::function<double(double)>& nll, bool degenerate) {
  TemperatureFit fit;
  if (degenerate) {
    fit.skipped = true;
    fit.temperature = 1.0;
    fit.nll_uncalibrated = fit.nll_calibrated = nll(1.0);
    return fit;
  }
  fit.nll_uncalibrated = nll(1.0);
  double t = golden_section_temperature(nll);
  double at_t = nll(t);
  if (at_t > fit.nll_uncalibrated) {
    t = 1.0;
    at_t = fit.nll_uncalibrated;
  }
  fit.temperature = t;
  fit.nll_calibrated = at_t;
  return fit;
}

}  // namespace

TemperatureFit fit_temperature(const std::vector<std::vector<double>>& logits,
                               std::span<const std::size_t> labels) {
  if (logits.size() != labels.size() || logits.empty()) {
    throw invalid_input("fit_temperature: logits and labels are misaligned or empty");
  }
  const std::set<std::size_t> distinct(labels.begin(), labels.end());
  auto nll = [&](double t) {
    double sum = 0.0;
    std::vector<double> scaled;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      scaled.assign(logits[i].begin(), logits[i].end());
      for (double& z : scaled) z /= t;
      sum += cross_entropy_loss(scaled, labels[i]);
    }
    return sum / static_cast<double>(logits.size());
  };
  return run_fit(nll, distinct.size() < 2);
}

TemperatureFit fit_temperature_binary(std::span<const double> logits,
                                      std::span<const int> targets) {
  if (logits.size() != targets.size() || logits.empty()) {
    throw invalid_input("fit_temperature_binary: logits and targets are misaligned or empty");
  }
  bool has0 = false, has1 = false;
  for (int t : targets) {
    if (t == 0) has0 = true;
    else if (t == 1) has1 = true;
    else throw invalid_input("fit_temperature_binary: targets must be 0 or 1");
  }
  auto nll = [&](double t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double z = logits[i] / t;
      const double y = static_cast<double>(targets[i]);
      sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    return sum / static_cast<double>(logits.size());
  };
  return run_fit(nll, !(has0 && has1));
}

std::vector<double> apply_temperature(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw invalid_input("apply_temperature: temperature must be > 0");
  }
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& z : scaled) z /= temperature;
  return softmax(scaled);
}

ReliabilityBins reliability_bins(std::span<const double> confidences,
                                 std::span<const std::uint8_t> correct, std::size_t bin_count) {
  if (confidences.size() != correct.size()) {
    throw invalid_input("reliability_bins: confidences and outcomes are misaligned");
  }
  if (confidences.empty()) throw invalid_input("reliability_bins: empty input");
  if (bin_count < 1) throw invalid_input("reliability_bins: bin count must be >= 1");

  ReliabilityBins out;
  out.bins.resize(bin_count);
  out.total = confidences.size();
  std::vector<double> conf_sum(bin_count, 0.0);
  std::vector<std::size_t> hit_sum(bin_count, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) {
      throw invalid_input("reliability_bins: confidence outside [0,1]");
    }
    const std::size_t j = std::min<std::size_t>(
        bin_count - 1, static_cast<std::size_t>(std::floor(c * static_cast<double>(bin_count))));
    out.bins[j].count += 1;
    conf_sum[j] += c;
    hit_sum[j] += correct[i] ? 1 : 0;
  }
  for (std::size_t j = 0; j < bin_count; ++j) {
    if (out.bins[j].count > 0) {
      out.bins[j].mean_confidence = conf_sum[j] / static_cast<double>(out.bins[j].count);
      out.bins[j].mean_accuracy =
          static_cast<double>(hit_sum[j]) / static_cast<double>(out.bins[j].count);
    }
  }
  return out;
}

double ece(std::span<const double> confidences, std::span<const std::uint8_t> correct,
           std::size_t bin_count) {
  const ReliabilityBins rb = reliability_bins(confidences, correct, bin_count);
  double total = 0.0;
  for (const auto& bin : rb.bins) {
    if (bin.count == 0) continue;
    total += (static_cast<double>(bin.count) / static_cast<double>(rb.total)) *
             std::abs(bin.mean_accuracy - bin.mean_confidence);
  }
  return total;
}

namespace {

struct ExitColumns {
  std::vector<std::vector<std::vector<double>>> exit_logits;  // [exit][sample][k]
  std::vector<std::vector<double>> gate_logits;               // [exit][sample] (gates only)
  std::vector<std::vector<double>> final_logits;              // [sample][k]
  std::vector<std::size_t> labels;
  std::vector<std::string> anchors;
  bool gates = false;
};

ExitColumns collect_columns(const MultiExitNetwork& net, std::span<const MultimodalSample> val) {
  if (val.empty()) throw invalid_input("per_exit_calibrate: empty validation split");
  ExitColumns cols;
  const std::size_t exits = net.exit_count();
  cols.gates = net.head_kind() == ExitHeadKind::Gate;
  cols.exit_logits.resize(exits);
  if (cols.gates) cols.gate_logits.resize(exits);
  for (const AnchorPoint& a : net.anchors()) cols.anchors.push_back(a.str());
  for (const MultimodalSample& s : val) {
    const ForwardTrace trace = net.forward_full(s);
    for (std::size_t b = 0; b < exits; ++b) {
      cols.exit_logits[b].push_back(trace.exits[b].logits);
      if (cols.gates) cols.gate_logits[b].push_back(*trace.exits[b].gate_logit);
    }
    cols.final_logits.push_back(trace.final_logits);
    cols.labels.push_back(s.label);
  }
  return cols;
}

ExitColumns columns_from_trace(const LogitTrace& trace) {
  if (trace.records.empty()) throw invalid_input("calibrate_from_trace: empty trace");
  ExitColumns cols;
  cols.gates = !trace.records.front().gate_logits.empty();
  cols.exit_logits.resize(trace.exit_count);
  if (cols.gates) cols.gate_logits.resize(trace.exit_count);
  cols.anchors = trace.anchors;
  for (const LogitTraceRecord& r : trace.records) {
    if (cols.gates && r.gate_logits.empty()) {
      throw invalid_input("calibrate_from_trace: mixed gate/ramp records");
    }
    for (std::size_t b = 0; b < trace.exit_count; ++b) {
      cols.exit_logits[b].push_back(r.exit_logits[b]);
      if (cols.gates) cols.gate_logits[b].push_back(r.gate_logits[b]);
    }
    cols.final_logits.push_back(r.final_logits);
    cols.labels.push_back(r.label);
  }
  return cols;
}

CalibrationEntry calibrate_kway(const std::string& anchor,
                                const std::vector<std::vector<double>>& logits,
                                std::span<const std::size_t> labels, std::size_t bin_count) {
  CalibrationEntry entry;
  entry.anchor = anchor;
  const TemperatureFit fit = fit_temperature(logits, labels);
  entry.temperature = fit.temperature;
  entry.head_temperature = fit.temperature;
  entry.skipped = fit.skipped;

  std::vector<double> confidences(logits.size());
  std::vector<std::uint8_t> correct(logits.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const std::vector<double> probs = apply_temperature(logits[i], fit.temperature);
    confidences[i] = *std::max_element(probs.begin(), probs.end());
    correct[i] = argmax(logits[i]) == labels[i] ? 1 : 0;
    hits += correct[i];
  }
  entry.accuracy = static_cast<double>(hits) / static_cast<double>(logits.size());
  entry.ece = ece(confidences, correct, bin_count);
  return entry;
}

CalibrationEntry calibrate_gate(const std::string& anchor,
                                const std::vector<std::vector<double>>& paired_logits,
                                std::span<const double> gate_logits,
                                std::span<const std::size_t> labels, std::size_t bin_count) {
  CalibrationEntry entry;
  entry.anchor = anchor;

  std::vector<int> targets(labels.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    targets[i] = argmax(paired_logits[i]) == labels[i] ? 1 : 0;
    hits += targets[i];
  }
  entry.accuracy = static_cast<double>(hits) / static_cast<double>(labels.size());

  const TemperatureFit head_fit = fit_temperature(paired_logits, labels);
  entry.head_temperature = head_fit.temperature;
  const TemperatureFit gate_fit = fit_temperature_binary(gate_logits, targets);
  entry.temperature = gate_fit.temperature;
  entry.skipped = gate_fit.skipped;

  std::vector<double> confidences(labels.size());
  std::vector<std::uint8_t> correct(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    confidences[i] = sigmoid(gate_logits[i] / gate_fit.temperature);
    correct[i] = static_cast<std::uint8_t>(targets[i]);
  }
  entry.ece = ece(confidences, correct, bin_count);
  return entry;
}

CalibrationTable calibrate_columns(const ExitColumns& cols, std::size_t bin_count) {
  if (bin_count < 1) throw invalid_input("calibration: bin count must be >= 1");
  CalibrationTable table;
  table.bins = bin_count;
  for (std::size_t b = 0; b < cols.exit_logits.size(); ++b) {
    if (cols.gates) {
      table.exits.push_back(calibrate_gate(cols.anchors[b], cols.exit_logits[b],
                                           cols.gate_logits[b], cols.labels, bin_count));
    } else {
      table.exits.push_back(
          calibrate_kway(cols.anchors[b], cols.exit_logits[b], cols.labels, bin_count));
    }
  }
  table.final_entry =
      calibrate_kway("FinalClassifier", cols.final_logits, cols.labels, bin_count);
  return table;
}

}  // namespace

CalibrationTable per_exit_calibrate(const MultiExitNetwork& net,
                                    std::span<const MultimodalSample> val,
                                    std::size_t bin_count) {
  return calibrate_columns(collect_columns(net, val), bin_count);
}

CalibrationTable calibrate_from_trace(const LogitTrace& trace, std::size_t bin_count) {
  return calibrate_columns(columns_from_trace(trace), bin_count);
}

void save_calibration(const CalibrationTable& table, const std::filesystem::path& path) {
  json j;
  json exits = json::array();
  for (const CalibrationEntry& e : table.exits) {
    json je;
    je["anchor"] = e.anchor;
    je["T"] = e.temperature;
    je["T_head"] = e.head_temperature;
    je["acc"] = e.accuracy;
    je["ece"] = e.ece;
    if (e.skipped) je["skipped"] = true;
    exits.push_back(je);
  }
  j["exits"] = exits;
  j["bins"] = table.bins;
  if (table.final_entry.has_value()) {
    const CalibrationEntry& e = *table.final_entry;
    j["final"] = {{"anchor", e.anchor}, {"T", e.temperature},   {"T_head", e.head_temperature},
                  {"acc", e.accuracy}, {"ece", e.ece}};
  }
  std::ofstream out(path);
  if (!out) throw format_error("calibration: cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << "\n";
  if (!out.good()) throw format_error("calibration: write failed");
}

CalibrationTable load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw format_error("calibration: cannot open '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw format_error("calibration '" + path.string() + "': " + e.what());
  }
  CalibrationTable table;
  try {
    table.bins = j.at("bins").get<std::size_t>();
    for (const auto& je : j.at("exits")) {
      CalibrationEntry e;
      e.anchor = je.at("anchor").get<std::string>();
      e.temperature = je.at("T").get<double>();
      e.head_temperature = je.value("T_head", e.temperature);
      e.accuracy = je.at("acc").get<double>();
      e.ece = je.at("ece").get<double>();
      e.skipped = je.value("skipped", false);
      table.exits.push_back(e);
    }
    if (j.contains("final")) {
      const auto& jf = j.at("final");
      CalibrationEntry e;
      e.anchor = jf.at("anchor").get<std::string>();
      e.temperature = jf.at("T").get<double>();
      e.head_temperature = jf.value("T_head", e.temperature);
      e.accuracy = jf.at("acc").get<double>();
      e.ece = jf.at("ece").get<double>();
      table.final_entry = e;
    }
  } catch (const json::exception& e) {
    throw format_error("calibration '" + path.string() + "': " + e.what());
  }
  for (const CalibrationEntry& e : table.exits) {
    if (!(e.temperature > 0.0)) throw format_error("calibration: temperature must be > 0");
  }
  return table;
}

}  // namespace mexit
