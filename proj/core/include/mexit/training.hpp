#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mexit/data.hpp"
#include "mexit/model.hpp"

namespace mexit {

enum class StrategyKind { Uniform, SubgraphWeighted, EntropyReg, WeightedEntropyReg };

std::string to_string(StrategyKind kind);
StrategyKind parse_strategy(std::string_view name);

/// How the per-exit losses are combined with the final-classifier loss.
///
///   Uniform             L_final + sum_b L_b
///   SubgraphWeighted    (1-g) L_final + g sum_b w_b L_b
///   EntropyReg          (1-g) L_final + g sum_b lambda_b L_b
///   WeightedEntropyReg  0.5 L_final + 0.5 sum_b w_b lambda_b L_b
///
/// w_b is the reciprocal parameter fraction of exit b's subgraph; lambda is
/// recomputed per batch from the exits' mean predictive entropies and is part
/// of the differentiated objective.
struct TrainStrategy {
  StrategyKind kind = StrategyKind::Uniform;
  double gamma = 0.5;

  static TrainStrategy uniform() { return {StrategyKind::Uniform, 0.0}; }
  static TrainStrategy subgraph_weighted(double gamma) {
    return {StrategyKind::SubgraphWeighted, gamma};
  }
  static TrainStrategy entropy_reg(double gamma) { return {StrategyKind::EntropyReg, gamma}; }
  static TrainStrategy weighted_entropy_reg() { return {StrategyKind::WeightedEntropyReg, 0.5}; }

  void validate() const;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 2;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double total_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> exit_losses;        // length B, mean over batches
  std::vector<double> exit_weights;       // length B, mean applied weight
  std::vector<double> val_exit_accuracy;  // length B
  double val_final_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

void save_history(const TrainHistory& history, const std::filesystem::path& path);  // JSONL

/// w_b = 1 / subgraph_param_fraction(b) for each exit.
std::vector<double> exit_weights_subgraph(const MultiExitNetwork& net);

/// lambda = 1 - softmax(mean entropies); sums to B-1 by construction.
std::vector<double> exit_weights_from_mean_entropies(std::span<const double> mean_entropies);

/// batch_exit_probs[sample][exit] is a probability vector (paired-head
/// distribution for gate exits).
std::vector<double> exit_weights_entropy(
    const std::vector<std::vector<std::vector<double>>>& batch_exit_probs);

/// Gate target is 1 iff the paired head's argmax equals the label.
std::vector<int> gate_targets(const std::vector<std::vector<double>>& paired_logits,
                              std::span<const std::size_t> labels);

struct LossBreakdown {
  double total = 0.0;
  double final_loss = 0.0;
  std::vector<double> exit_losses;      // batch-mean loss per exit
  std::vector<double> applied_weights;  // per-exit factor (w_b, lambda_b or product; gamma excluded)
};

/// Strategy combination on already-computed batch-mean losses. Entropy-based
/// strategies need the batch's mean exit entropies.
LossBreakdown combine_strategy_losses(const TrainStrategy& strategy, double final_loss,
                                      std::span<const double> exit_losses,
                                      std::span<const double> subgraph_weights,
                                      std::span<const double> mean_entropies);

/// Full forward + loss of one batch (no parameter updates).
LossBreakdown total_loss(const TrainStrategy& strategy, const MultiExitNetwork& net,
                         std::span<const MultimodalSample> batch);

/// Like total_loss, but also backpropagates: zeroes every group gradient,
/// then accumulates d(total)/d(theta) into the network's parameter groups.
LossBreakdown batch_gradients(const TrainStrategy& strategy, MultiExitNetwork& net,
                              std::span<const MultimodalSample> batch);

/// AdamW fine-tuning. Deterministic given config.seed (fixed shuffle stream);
/// throws numerical_error with an epoch/batch diagnostic if the loss goes
/// non-finite.
TrainHistory train(MultiExitNetwork& net, const Dataset& data, const TrainStrategy& strategy,
                   const TrainConfig& config);

}  // namespace mexit
