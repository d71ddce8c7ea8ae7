#pragma once

#include <string>

#include "config.hpp"

namespace mexit::cli {

/// File-path arguments shared by the subcommands. Empty string = not given.
struct Paths {
  std::string data;         // dataset directory (gen-data output)
  std::string checkpoint;   // trained network
  std::string history;      // training history JSONL
  std::string calibration;  // calibration table JSON
  std::string policy;       // policy JSON (evaluate)
  std::string trace;        // logit trace JSONL, replaces checkpoint+data
  std::string out;          // command output file or directory
  std::string split = "test";
  bool no_calibration = false;
  bool counts_view = false;  // exit-patterns: raw counts instead of log-normalized
};

int cmd_gen_data(const RunConfig& config, const Paths& paths);
int cmd_train(const RunConfig& config, const Paths& paths);
int cmd_calibrate(const RunConfig& config, const Paths& paths);
int cmd_sweep_global(const RunConfig& config, const Paths& paths);
int cmd_search_multi(const RunConfig& config, const Paths& paths);
int cmd_heuristic(const RunConfig& config, const Paths& paths);
int cmd_evaluate(const RunConfig& config, const Paths& paths);
int cmd_exit_patterns(const RunConfig& config, const Paths& paths);
int cmd_compare(const RunConfig& config, const Paths& paths);
int cmd_dump_trace(const RunConfig& config, const Paths& paths);

}  // namespace mexit::cli
