#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mexit {

// Probabilities passed to binary_cross_entropy are clamped into
// [BCE_PROB_CLAMP, 1 - BCE_PROB_CLAMP] before taking logs.
inline constexpr double BCE_PROB_CLAMP = 1e-7;

double log_sum_exp(std::span<const double> v);

/// Numerically stable softmax (max-subtraction). Output sums to 1 and
/// preserves entry order. Throws invalid_input on empty or non-finite input.
std::vector<double> softmax(std::span<const double> logits);

std::vector<double> log_softmax(std::span<const double> logits);

/// Shannon entropy of a probability vector, in nats. 0*log(0) counts as 0.
/// Requires entries >= 0 and sum within 1e-6 of 1.
double predictive_entropy(std::span<const double> probs);

/// -log softmax(logits)[label].
double cross_entropy_loss(std::span<const double> logits, std::size_t label);

/// -[y log p + (1-y) log(1-p)] with p clamped away from {0,1}. y must be 0 or 1.
double binary_cross_entropy(double p, int y);

double sigmoid(double z);

std::size_t argmax(std::span<const double> v);

}  // namespace mexit
