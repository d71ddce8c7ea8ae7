#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mexit/data.hpp"
#include "mexit/model.hpp"
#include "mexit/training.hpp"

namespace mexit::cli {

/// One experiment bundle: everything a run needs besides file paths. A single
/// master seed feeds the named substreams (data/init/shuffle/search), so any
/// component reruns bit-identically from the same config.
struct RunConfig {
  std::uint64_t seed = 0;

  DatasetSpec dataset;      // dataset.seed is replaced by the master seed
  BackboneConfig backbone;  // modality dims and K follow the dataset at train time
  std::string placement = "concat-quarter";
  std::string head = "ramp";

  std::string strategy = "weighted";
  double gamma = 0.5;
  TrainConfig train;  // train.seed is replaced by the master seed

  std::size_t calibration_bins = 10;

  double tau = 0.5;      // global threshold for evaluate
  double epsilon = 0.05; // heuristic epsilon
  double sweep_step = 0.05;
  std::size_t search_budget = 1'000'000;

  std::string cost_model = "uniform";
};

std::string to_json_string(const RunConfig& config);
RunConfig from_json_string(const std::string& text);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace mexit::cli
