#include "mexit/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "mexit/errors.hpp"
#include "mexit/ops.hpp"
#include "mexit/rng.hpp"

namespace mexit {

using nlohmann::json;

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Uniform: return "uniform";
    case StrategyKind::SubgraphWeighted: return "weighted";
    case StrategyKind::EntropyReg: return "entropyreg";
    case StrategyKind::WeightedEntropyReg: return "weighted-entropyreg";
  }
  return "?";
}

StrategyKind parse_strategy(std::string_view name) {
  if (name == "uniform") return StrategyKind::Uniform;
  if (name == "weighted") return StrategyKind::SubgraphWeighted;
  if (name == "entropyreg") return StrategyKind::EntropyReg;
  if (name == "weighted-entropyreg") return StrategyKind::WeightedEntropyReg;
  throw invalid_input("unknown training strategy: '" + std::string(name) + "'");
}

void TrainStrategy::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw invalid_input("strategy: gamma must lie in [0,1]");
  if (kind == StrategyKind::WeightedEntropyReg && gamma != 0.5) {
    throw invalid_input("strategy: weighted-entropyreg fixes gamma = 0.5");
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw invalid_input("train config: epochs must be >= 1");
  if (batch_size < 1) throw invalid_input("train config: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw invalid_input("train config: learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw invalid_input("train config: weight_decay must be >= 0");
}

std::vector<double> exit_weights_subgraph(const MultiExitNetwork& net) {
  std::vector<double> out;
  out.reserve(net.exit_count());
  for (std::size_t b = 0; b < net.exit_count(); ++b) {
    out.push_back(subgraph_weight_from_fraction(net.subgraph_param_fraction(b)));
  }
  return out;
}

std::vector<double> exit_weights_from_mean_entropies(std::span<const double> mean_entropies) {
  if (mean_entropies.empty()) throw invalid_input("exit_weights_entropy: no exits");
  const std::vector<double> s = softmax(mean_entropies);
  std::vector<double> lambda(s.size());
  for (std::size_t b = 0; b < s.size(); ++b) lambda[b] = 1.0 - s[b];
  return lambda;
}

std::vector<double> exit_weights_entropy(
    const std::vector<std::vector<std::vector<double>>>& batch_exit_probs) {
  if (batch_exit_probs.empty()) throw invalid_input("exit_weights_entropy: empty batch");
  const std::size_t exits = batch_exit_probs.front().size();
  if (exits == 0) throw invalid_input("exit_weights_entropy: no exits");
  std::vector<double> means(exits, 0.0);
  for (const auto& per_sample : batch_exit_probs) {
    if (per_sample.size() != exits) {
      throw invalid_input("exit_weights_entropy: inconsistent exit count across samples");
    }
    for (std::size_t b = 0; b < exits; ++b) means[b] += predictive_entropy(per_sample[b]);
  }
  for (double& m : means) m /= static_cast<double>(batch_exit_probs.size());
  return exit_weights_from_mean_entropies(means);
}

std::vector<int> gate_targets(const std::vector<std::vector<double>>& paired_logits,
                              std::span<const std::size_t> labels) {
  if (paired_logits.size() != labels.size()) {
    throw invalid_input("gate_targets: logits and labels are misaligned");
  }
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = argmax(paired_logits[i]) == labels[i] ? 1 : 0;
  }
  return out;
}

LossBreakdown combine_strategy_losses(const TrainStrategy& strategy, double final_loss,
                                      std::span<const double> exit_losses,
                                      std::span<const double> subgraph_weights,
                                      std::span<const double> mean_entropies) {
  strategy.validate();
  const std::size_t exits = exit_losses.size();
  LossBreakdown out;
  out.final_loss = final_loss;
  out.exit_losses.assign(exit_losses.begin(), exit_losses.end());
  out.applied_weights.assign(exits, 1.0);

  if (exits == 0) {
    out.total = final_loss;
    return out;
  }

  const double gamma = strategy.gamma;
  switch (strategy.kind) {
    case StrategyKind::Uniform: {
      double sum = final_loss;
      for (double l : exit_losses) sum += l;
      out.total = sum;
      return out;
    }
    case StrategyKind::SubgraphWeighted: {
      if (subgraph_weights.size() != exits) {
        throw invalid_input("combine_strategy_losses: weight vector length mismatch");
      }
      double sum = 0.0;
      for (std::size_t b = 0; b < exits; ++b) {
        out.applied_weights[b] = subgraph_weights[b];
        sum += subgraph_weights[b] * exit_losses[b];
      }
      out.total = (1.0 - gamma) * final_loss + gamma * sum;
      return out;
    }
    case StrategyKind::EntropyReg:
    case StrategyKind::WeightedEntropyReg: {
      if (mean_entropies.size() != exits) {
        throw invalid_input("combine_strategy_losses: entropy vector length mismatch");
      }
      const std::vector<double> lambda = exit_weights_from_mean_entropies(mean_entropies);
      double sum = 0.0;
      for (std::size_t b = 0; b < exits; ++b) {
        double w = lambda[b];
        if (strategy.kind == StrategyKind::WeightedEntropyReg) {
          if (subgraph_weights.size() != exits) {
            throw invalid_input("combine_strategy_losses: weight vector length mismatch");
          }
          w *= subgraph_weights[b];
        }
        out.applied_weights[b] = w;
        sum += w * exit_losses[b];
      }
      out.total = (1.0 - gamma) * final_loss + gamma * sum;
      return out;
    }
  }
  throw invalid_input("combine_strategy_losses: unknown strategy");
}

namespace {

struct BatchLossGraph {
  Tape::NodeId root = 0;
  LossBreakdown breakdown;
};

// Builds the full differentiable batch objective. Entropy weights are part
// of the graph, so total gradients match finite differences of this very
// function.
template <typename ForwardFn>
BatchLossGraph build_batch_loss(Tape& tape, const MultiExitNetwork& net,
                                const TrainStrategy& strategy,
                                std::span<const MultimodalSample> batch, ForwardFn forward) {
  strategy.validate();
  if (batch.empty()) throw invalid_input("total_loss: empty batch");
  const std::size_t exits = net.exit_count();
  const std::size_t n = batch.size();
  const bool gates = net.head_kind() == ExitHeadKind::Gate;

  std::vector<ForwardNodes> passes;
  passes.reserve(n);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (batch[i].label >= net.config().classes) {
      throw invalid_input("total_loss: label out of range");
    }
    labels[i] = batch[i].label;
    passes.push_back(forward(tape, batch[i]));
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  const std::vector<double> mean_coeffs(n, inv_n);

  std::vector<Tape::NodeId> final_terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    final_terms[i] = tape.softmax_cross_entropy(passes[i].final_logits, labels[i]);
  }
  const Tape::NodeId final_loss = tape.weighted_sum(final_terms, mean_coeffs);

  std::vector<Tape::NodeId> exit_loss_nodes(exits);
  for (std::size_t b = 0; b < exits; ++b) {
    if (!gates) {
      std::vector<Tape::NodeId> terms(n);
      for (std::size_t i = 0; i < n; ++i) {
        terms[i] = tape.softmax_cross_entropy(passes[i].exits[b].logits, labels[i]);
      }
      exit_loss_nodes[b] = tape.weighted_sum(terms, mean_coeffs);
    } else {
      std::vector<std::vector<double>> paired(n);
      for (std::size_t i = 0; i < n; ++i) {
        paired[i] = tape.value(passes[i].exits[b].logits).values();
      }
      const std::vector<int> targets = gate_targets(paired, labels);
      std::vector<Tape::NodeId> terms;
      terms.reserve(2 * n);
      for (std::size_t i = 0; i < n; ++i) {
        terms.push_back(tape.sigmoid_bce(*passes[i].exits[b].gate_logit,
                                         static_cast<double>(targets[i])));
        terms.push_back(tape.softmax_cross_entropy(passes[i].exits[b].logits, labels[i]));
      }
      const std::vector<double> coeffs(2 * n, inv_n);
      exit_loss_nodes[b] = tape.weighted_sum(terms, coeffs);
    }
  }

  const bool needs_entropy = strategy.kind == StrategyKind::EntropyReg ||
                             strategy.kind == StrategyKind::WeightedEntropyReg;
  std::vector<Tape::NodeId> lambda_nodes;
  std::vector<double> mean_entropy_values;
  if (needs_entropy && exits > 0) {
    std::vector<Tape::NodeId> mean_entropies(exits);
    for (std::size_t b = 0; b < exits; ++b) {
      std::vector<Tape::NodeId> terms(n);
      for (std::size_t i = 0; i < n; ++i) {
        terms[i] = tape.entropy_of_logits(passes[i].exits[b].logits);
      }
      mean_entropies[b] = tape.weighted_sum(terms, mean_coeffs);
    }
    const Tape::NodeId stacked = tape.stack_scalars(mean_entropies);
    const Tape::NodeId soft = tape.softmax_vec(stacked);
    lambda_nodes.resize(exits);
    mean_entropy_values.resize(exits);
    for (std::size_t b = 0; b < exits; ++b) {
      lambda_nodes[b] = tape.affine_scalar(tape.pick(soft, b), -1.0, 1.0);
      mean_entropy_values[b] = tape.scalar_value(mean_entropies[b]);
    }
  }

  const std::vector<double> w =
      exits > 0 ? exit_weights_subgraph(net) : std::vector<double>{};

  BatchLossGraph graph;
  const double gamma = strategy.gamma;

  if (exits == 0) {
    graph.root = final_loss;
  } else {
    switch (strategy.kind) {
      case StrategyKind::Uniform: {
        std::vector<Tape::NodeId> terms{final_loss};
        std::vector<double> coeffs{1.0};
        for (std::size_t b = 0; b < exits; ++b) {
          terms.push_back(exit_loss_nodes[b]);
          coeffs.push_back(1.0);
        }
        graph.root = tape.weighted_sum(terms, coeffs);
        break;
      }
      case StrategyKind::SubgraphWeighted: {
        std::vector<Tape::NodeId> terms{final_loss};
        std::vector<double> coeffs{1.0 - gamma};
        for (std::size_t b = 0; b < exits; ++b) {
          terms.push_back(exit_loss_nodes[b]);
          coeffs.push_back(gamma * w[b]);
        }
        graph.root = tape.weighted_sum(terms, coeffs);
        break;
      }
      case StrategyKind::EntropyReg:
      case StrategyKind::WeightedEntropyReg: {
        std::vector<Tape::NodeId> terms{final_loss};
        std::vector<double> coeffs{1.0 - gamma};
        for (std::size_t b = 0; b < exits; ++b) {
          terms.push_back(tape.mul(lambda_nodes[b], exit_loss_nodes[b]));
          coeffs.push_back(strategy.kind == StrategyKind::WeightedEntropyReg ? gamma * w[b]
                                                                             : gamma);
        }
        graph.root = tape.weighted_sum(terms, coeffs);
        break;
      }
    }
  }

  graph.breakdown.total = tape.scalar_value(graph.root);
  graph.breakdown.final_loss = tape.scalar_value(final_loss);
  graph.breakdown.exit_losses.resize(exits);
  graph.breakdown.applied_weights.assign(exits, 1.0);
  for (std::size_t b = 0; b < exits; ++b) {
    graph.breakdown.exit_losses[b] = tape.scalar_value(exit_loss_nodes[b]);
    switch (strategy.kind) {
      case StrategyKind::Uniform: break;
      case StrategyKind::SubgraphWeighted:
        graph.breakdown.applied_weights[b] = w[b];
        break;
      case StrategyKind::EntropyReg:
        graph.breakdown.applied_weights[b] = tape.scalar_value(lambda_nodes[b]);
        break;
      case StrategyKind::WeightedEntropyReg:
        graph.breakdown.applied_weights[b] = w[b] * tape.scalar_value(lambda_nodes[b]);
        break;
    }
  }
  return graph;
}

class AdamW {
 public:
  AdamW(const TrainConfig& config, const std::vector<ParameterGroup>& groups) : config_(config) {
    for (const ParameterGroup& g : groups) {
      state_.push_back({Matrix(g.value.rows(), g.value.cols()),
                        Matrix(g.value.rows(), g.value.cols())});
    }
  }

  void step(std::vector<ParameterGroup>& groups) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      ParameterGroup& g = groups[gi];
      Matrix& m = state_[gi].m;
      Matrix& v = state_[gi].v;
      for (std::size_t i = 0; i < g.value.size(); ++i) {
        const double grad = g.grad[i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad * grad;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        g.value[i] -= config_.learning_rate *
                      (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * g.value[i]);
      }
    }
  }

 private:
  struct State {
    Matrix m, v;
  };
  TrainConfig config_;
  std::vector<State> state_;
  std::size_t t_ = 0;
};

struct ValAccuracy {
  std::vector<double> per_exit;
  double final_acc = 0.0;
};

ValAccuracy validation_accuracy(const MultiExitNetwork& net,
                                std::span<const MultimodalSample> val) {
  ValAccuracy acc;
  acc.per_exit.assign(net.exit_count(), 0.0);
  if (val.empty()) return acc;
  std::size_t final_correct = 0;
  std::vector<std::size_t> exit_correct(net.exit_count(), 0);
  for (const MultimodalSample& s : val) {
    const ForwardTrace trace = net.forward_full(s);
    for (std::size_t b = 0; b < trace.exits.size(); ++b) {
      if (argmax(trace.exits[b].logits) == s.label) ++exit_correct[b];
    }
    if (argmax(trace.final_logits) == s.label) ++final_correct;
  }
  for (std::size_t b = 0; b < exit_correct.size(); ++b) {
    acc.per_exit[b] = static_cast<double>(exit_correct[b]) / static_cast<double>(val.size());
  }
  acc.final_acc = static_cast<double>(final_correct) / static_cast<double>(val.size());
  return acc;
}

}  // namespace

LossBreakdown total_loss(const TrainStrategy& strategy, const MultiExitNetwork& net,
                         std::span<const MultimodalSample> batch) {
  Tape tape;
  auto forward = [&net](Tape& t, const MultimodalSample& s) { return net.forward_on_tape(t, s); };
  return build_batch_loss(tape, net, strategy, batch, forward).breakdown;
}

LossBreakdown batch_gradients(const TrainStrategy& strategy, MultiExitNetwork& net,
                              std::span<const MultimodalSample> batch) {
  for (ParameterGroup& g : net.parameters()) g.zero_grad();
  Tape tape;
  auto forward = [&net](Tape& t, const MultimodalSample& s) { return net.forward_on_tape(t, s); };
  const BatchLossGraph graph = build_batch_loss(tape, net, strategy, batch, forward);
  tape.backward(graph.root);
  return graph.breakdown;
}

TrainHistory train(MultiExitNetwork& net, const Dataset& data, const TrainStrategy& strategy,
                   const TrainConfig& config) {
  strategy.validate();
  config.validate();
  if (data.train.empty()) throw invalid_input("train: empty training split");

  AdamW optimizer(config, net.parameters());
  Rng shuffle_rng = Rng::substream(config.seed, "shuffle");

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainHistory history;
  Tape tape;
  auto forward = [&net](Tape& t, const MultimodalSample& s) { return net.forward_on_tape(t, s); };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);

    EpochRecord record;
    record.epoch = epoch;
    record.exit_losses.assign(net.exit_count(), 0.0);
    record.exit_weights.assign(net.exit_count(), 0.0);
    std::size_t batches = 0;

    std::vector<MultimodalSample> batch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (std::size_t i = start; i < end; ++i) batch.push_back(data.train[order[i]]);

      tape.reset();
      for (ParameterGroup& g : net.parameters()) g.zero_grad();
      const BatchLossGraph graph = build_batch_loss(tape, net, strategy, batch, forward);
      if (!std::isfinite(graph.breakdown.total)) {
        throw numerical_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batches));
      }
      tape.backward(graph.root);
      optimizer.step(net.parameters());

      record.total_loss += graph.breakdown.total;
      record.final_loss += graph.breakdown.final_loss;
      for (std::size_t b = 0; b < net.exit_count(); ++b) {
        record.exit_losses[b] += graph.breakdown.exit_losses[b];
        record.exit_weights[b] += graph.breakdown.applied_weights[b];
      }
      ++batches;
    }

    const double inv = batches > 0 ? 1.0 / static_cast<double>(batches) : 0.0;
    record.total_loss *= inv;
    record.final_loss *= inv;
    for (std::size_t b = 0; b < net.exit_count(); ++b) {
      record.exit_losses[b] *= inv;
      record.exit_weights[b] *= inv;
    }

    const ValAccuracy acc = validation_accuracy(net, data.val);
    record.val_exit_accuracy = acc.per_exit;
    record.val_final_accuracy = acc.final_acc;
    history.epochs.push_back(std::move(record));
  }
  return history;
}

void save_history(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw format_error("history: cannot open '" + path.string() + "' for writing");
  for (const EpochRecord& r : history.epochs) {
    json j;
    j["epoch"] = r.epoch;
    j["total_loss"] = r.total_loss;
    j["final_loss"] = r.final_loss;
    j["exit_losses"] = r.exit_losses;
    j["exit_weights"] = r.exit_weights;
    j["val_exit_accuracy"] = r.val_exit_accuracy;
    j["val_final_accuracy"] = r.val_final_accuracy;
    out << j.dump() << "\n";
  }
  if (!out.good()) throw format_error("history: write failed for '" + path.string() + "'");
}

}  // namespace mexit
