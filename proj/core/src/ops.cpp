#include "mexit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mexit/errors.hpp"

namespace mexit {

namespace {

void require_finite(std::span<const double> v, const char* who) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw invalid_input(std::string(who) + ": non-finite entry");
    }
  }
}

}  // namespace

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw invalid_input("log_sum_exp: empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw invalid_input("softmax: empty vector");
  require_finite(logits, "softmax");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw invalid_input("log_softmax: empty vector");
  require_finite(logits, "log_softmax");
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double predictive_entropy(std::span<const double> probs) {
  if (probs.empty()) throw invalid_input("predictive_entropy: empty vector");
  double sum = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) {
      throw invalid_input("predictive_entropy: entries must be finite and >= 0");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw invalid_input("predictive_entropy: probabilities must sum to 1");
  }
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double cross_entropy_loss(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw invalid_input("cross_entropy_loss: label out of range");
  }
  require_finite(logits, "cross_entropy_loss");
  return log_sum_exp(logits) - logits[label];
}

double binary_cross_entropy(double p, int y) {
  if (y != 0 && y != 1) {
    throw invalid_input("binary_cross_entropy: y must be 0 or 1");
  }
  if (!std::isfinite(p)) {
    throw invalid_input("binary_cross_entropy: non-finite probability");
  }
  const double q = std::clamp(p, BCE_PROB_CLAMP, 1.0 - BCE_PROB_CLAMP);
  return y == 1 ? -std::log(q) : -std::log(1.0 - q);
}

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw invalid_input("argmax: empty vector");
  return static_cast<std::size_t>(
      std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

}  // namespace mexit
