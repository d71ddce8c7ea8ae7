#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mexit/matrix.hpp"

namespace mexit {

/// A named block of trainable values plus its accumulated gradient.
struct ParameterGroup {
  std::string name;
  Matrix value;
  Matrix grad;

  ParameterGroup(std::string group_name, Matrix v)
      : name(std::move(group_name)),
        value(std::move(v)),
        grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const { return value.size(); }
};

enum class Activation { Tanh, Relu };

Activation parse_activation(std::string_view name);
std::string to_string(Activation a);

/// Eager reverse-mode tape over Matrix-valued nodes.
///
/// Nodes are appended in forward (topological) order; backward() walks the
/// record once in reverse, so every node is visited exactly once. A tape is
/// single-writer: one forward/backward pair per thread, no sharing.
class Tape {
 public:
  using NodeId = std::uint32_t;

  NodeId constant(Matrix v);
  /// Leaf whose gradient is accumulated into `group.grad` by backward().
  NodeId parameter(ParameterGroup& group);

  /// w (m x n) * x (n x 1) + b (m x 1)
  NodeId affine(NodeId w, NodeId x, NodeId b);
  NodeId activation(NodeId x, Activation act);
  NodeId concat(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);

  /// Scalar loss: log_sum_exp(logits) - logits[label].
  NodeId softmax_cross_entropy(NodeId logits, std::size_t label);
  /// Scalar loss on a 1x1 logit node: BCE(sigmoid(z), target), computed in
  /// logit space so it stays finite for any z.
  NodeId sigmoid_bce(NodeId logit, double target);
  /// Scalar: Shannon entropy of softmax(logits), in nats.
  NodeId entropy_of_logits(NodeId logits);

  NodeId stack_scalars(std::span<const NodeId> xs);
  NodeId softmax_vec(NodeId v);
  NodeId pick(NodeId v, std::size_t i);
  NodeId mul(NodeId a, NodeId b);
  NodeId affine_scalar(NodeId x, double a, double c);
  NodeId weighted_sum(std::span<const NodeId> xs, std::span<const double> coeffs);

  const Matrix& value(NodeId id) const { return nodes_[id].value; }
  const Matrix& gradient(NodeId id) const { return nodes_[id].grad; }
  double scalar_value(NodeId id) const;

  /// Seeds d(root)/d(root) = 1 and visits the record in reverse creation
  /// order. Parameter-node gradients are added into their groups.
  void backward(NodeId root);

  void reset() { nodes_.clear(); }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    ParameterGroup* param = nullptr;
    // Distributes this node's gradient into its parents' gradients.
    std::function<void(Tape&, const Matrix&)> pull;
  };

  std::vector<Node> nodes_;

  NodeId push(Matrix value, std::function<void(Tape&, const Matrix&)> pull,
              ParameterGroup* param = nullptr);
  Matrix& grad_of(NodeId id) { return nodes_[id].grad; }
  void check_scalar(NodeId id, const char* who) const;
};

}  // namespace mexit
