#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mexit/data.hpp"
#include "mexit/model.hpp"

namespace mexit {

inline constexpr double TEMPERATURE_MIN = 0.05;
inline constexpr double TEMPERATURE_MAX = 10.0;
inline constexpr std::size_t DEFAULT_ECE_BINS = 10;

struct TemperatureFit {
  double temperature = 1.0;
  bool skipped = false;  // degenerate single-class validation set
  double nll_uncalibrated = 0.0;
  double nll_calibrated = 0.0;
};

/// Minimizes mean cross-entropy of softmax(z/T) over T in [0.05, 10] by
/// golden-section search on log T (absolute tolerance 1e-3 on T). Never
/// returns a temperature whose NLL exceeds the T=1 baseline.
TemperatureFit fit_temperature(const std::vector<std::vector<double>>& logits,
                               std::span<const std::size_t> labels);

/// Binary variant: mean BCE of sigmoid(z/T) against {0,1} targets.
TemperatureFit fit_temperature_binary(std::span<const double> logits,
                                      std::span<const int> targets);

/// softmax(z / T). Preserves the argmax for every T > 0.
std::vector<double> apply_temperature(std::span<const double> logits, double temperature);

struct ReliabilityBins {
  struct Bin {
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double mean_accuracy = 0.0;
  };
  std::vector<Bin> bins;  // equal-width over [0,1]
  std::size_t total = 0;
};

/// Equal-width binning; a confidence on an interior edge goes to the higher
/// bin and 1.0 goes to the last bin.
ReliabilityBins reliability_bins(std::span<const double> confidences,
                                 std::span<const std::uint8_t> correct, std::size_t bin_count);

/// Expected calibration error over J equal-width bins; empty bins contribute 0.
double ece(std::span<const double> confidences, std::span<const std::uint8_t> correct,
           std::size_t bin_count);

struct CalibrationEntry {
  std::string anchor;             // "Encoder(4)", ..., or "FinalClassifier"
  double temperature = 1.0;       // scales the confidence policies threshold on
  double head_temperature = 1.0;  // gates: paired-head temperature; ramps: same as temperature
  double accuracy = 0.0;          // post-calibration argmax accuracy
  double ece = 0.0;               // post-calibration ECE of the exit confidence
  bool skipped = false;
};

struct CalibrationTable {
  std::vector<CalibrationEntry> exits;          // length B
  std::optional<CalibrationEntry> final_entry;  // informational; never thresholded
  std::size_t bins = DEFAULT_ECE_BINS;
};

/// Fits per-exit temperatures on the validation split and records each
/// exit's post-calibration accuracy and ECE. Ramp exits calibrate their K-way
/// logits; gate exits calibrate the gate logit (the thresholded confidence)
/// and the paired head separately.
CalibrationTable per_exit_calibrate(const MultiExitNetwork& net,
                                    std::span<const MultimodalSample> val,
                                    std::size_t bin_count = DEFAULT_ECE_BINS);

/// Same fit driven by a stored logit trace.
CalibrationTable calibrate_from_trace(const LogitTrace& trace,
                                      std::size_t bin_count = DEFAULT_ECE_BINS);

void save_calibration(const CalibrationTable& table, const std::filesystem::path& path);
CalibrationTable load_calibration(const std::filesystem::path& path);

}  // namespace mexit
