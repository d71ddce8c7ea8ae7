#include "mexit/autodiff.hpp"

#include <cmath>
#include <string>

#include "mexit/errors.hpp"
#include "mexit/ops.hpp"

namespace mexit {

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw invalid_input("unknown activation: " + std::string(name));
}

std::string to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "relu";
}

Tape::NodeId Tape::push(Matrix value, std::function<void(Tape&, const Matrix&)> pull,
                        ParameterGroup* param) {
  Node node;
  node.value = std::move(value);
  node.grad = Matrix(node.value.rows(), node.value.cols());
  node.param = param;
  node.pull = std::move(pull);
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_scalar(NodeId id, const char* who) const {
  if (nodes_[id].value.size() != 1) {
    throw invalid_input(std::string(who) + ": node is not a scalar");
  }
}

double Tape::scalar_value(NodeId id) const {
  check_scalar(id, "scalar_value");
  return nodes_[id].value[0];
}

Tape::NodeId Tape::constant(Matrix v) { return push(std::move(v), nullptr); }

Tape::NodeId Tape::parameter(ParameterGroup& group) {
  return push(group.value, nullptr, &group);
}

Tape::NodeId Tape::affine(NodeId w, NodeId x, NodeId b) {
  const Matrix& wv = value(w);
  const Matrix& xv = value(x);
  const Matrix& bv = value(b);
  if (xv.cols() != 1 || wv.cols() != xv.rows() || bv.rows() != wv.rows() || bv.cols() != 1) {
    throw invalid_input("affine: shape mismatch");
  }
  Matrix out = matvec(wv, xv);
  for (std::size_t r = 0; r < out.rows(); ++r) out[r] += bv[r];
  auto pull = [w, x, b](Tape& t, const Matrix& g) {
    const Matrix& wv2 = t.value(w);
    const Matrix& xv2 = t.value(x);
    Matrix& gw = t.grad_of(w);
    Matrix& gx = t.grad_of(x);
    Matrix& gb = t.grad_of(b);
    for (std::size_t r = 0; r < wv2.rows(); ++r) {
      const double gr = g[r];
      gb[r] += gr;
      for (std::size_t c = 0; c < wv2.cols(); ++c) {
        gw.at(r, c) += gr * xv2[c];
        gx[c] += wv2.at(r, c) * gr;
      }
    }
  };
  return push(std::move(out), pull);
}

Tape::NodeId Tape::activation(NodeId x, Activation act) {
  const Matrix& xv = value(x);
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = act == Activation::Tanh ? std::tanh(xv[i]) : (xv[i] > 0.0 ? xv[i] : 0.0);
  }
  auto pull = [x, act](Tape& t, const Matrix& g) {
    const Matrix& xv2 = t.value(x);
    Matrix& gx = t.grad_of(x);
    for (std::size_t i = 0; i < xv2.size(); ++i) {
      if (act == Activation::Tanh) {
        const double th = std::tanh(xv2[i]);
        gx[i] += g[i] * (1.0 - th * th);
      } else {
        gx[i] += xv2[i] > 0.0 ? g[i] : 0.0;
      }
    }
  };
  return push(std::move(out), pull);
}

Tape::NodeId Tape::concat(NodeId a, NodeId b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != 1 || bv.cols() != 1) throw invalid_input("concat: expects column vectors");
  std::vector<double> data;
  data.reserve(av.size() + bv.size());
  data.insert(data.end(), av.values().begin(), av.values().end());
  data.insert(data.end(), bv.values().begin(), bv.values().end());
  const std::size_t na = av.size();
  auto pull = [a, b, na](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_of(a);
    Matrix& gb = t.grad_of(b);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
  };
  return push(Matrix::column(std::move(data)), pull);
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (!av.same_shape(bv)) throw invalid_input("add: shape mismatch");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto pull = [a, b](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_of(a);
    Matrix& gb = t.grad_of(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  };
  return push(std::move(out), pull);
}

Tape::NodeId Tape::softmax_cross_entropy(NodeId logits, std::size_t label) {
  const Matrix& zv = value(logits);
  if (label >= zv.size()) throw invalid_input("softmax_cross_entropy: label out of range");
  const double loss = cross_entropy_loss(zv.values(), label);
  std::vector<double> probs = softmax(zv.values());
  auto pull = [logits, label, probs](Tape& t, const Matrix& g) {
    Matrix& gz = t.grad_of(logits);
    const double gs = g[0];
    for (std::size_t i = 0; i < probs.size(); ++i) {
      gz[i] += gs * (probs[i] - (i == label ? 1.0 : 0.0));
    }
  };
  return push(Matrix::scalar(loss), pull);
}

Tape::NodeId Tape::sigmoid_bce(NodeId logit, double target) {
  check_scalar(logit, "sigmoid_bce");
  if (target != 0.0 && target != 1.0) throw invalid_input("sigmoid_bce: target must be 0 or 1");
  const double z = value(logit)[0];
  const double loss = std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
  auto pull = [logit, target](Tape& t, const Matrix& g) {
    const double z2 = t.value(logit)[0];
    t.grad_of(logit)[0] += g[0] * (sigmoid(z2) - target);
  };
  return push(Matrix::scalar(loss), pull);
}

Tape::NodeId Tape::entropy_of_logits(NodeId logits) {
  const Matrix& zv = value(logits);
  std::vector<double> probs = softmax(zv.values());
  std::vector<double> logp = log_softmax(zv.values());
  double h = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) h -= probs[i] * logp[i];
  // dH/dz_i = -p_i * (z_i - E_p[z])
  double ez = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) ez += probs[i] * zv[i];
  auto pull = [logits, probs, ez](Tape& t, const Matrix& g) {
    const Matrix& zv2 = t.value(logits);
    Matrix& gz = t.grad_of(logits);
    const double gs = g[0];
    for (std::size_t i = 0; i < probs.size(); ++i) {
      gz[i] += gs * (-probs[i] * (zv2[i] - ez));
    }
  };
  return push(Matrix::scalar(h), pull);
}

Tape::NodeId Tape::stack_scalars(std::span<const NodeId> xs) {
  if (xs.empty()) throw invalid_input("stack_scalars: empty");
  std::vector<double> data(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    check_scalar(xs[i], "stack_scalars");
    data[i] = value(xs[i])[0];
  }
  std::vector<NodeId> parents(xs.begin(), xs.end());
  auto pull = [parents](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < parents.size(); ++i) t.grad_of(parents[i])[0] += g[i];
  };
  return push(Matrix::column(std::move(data)), pull);
}

Tape::NodeId Tape::softmax_vec(NodeId v) {
  std::vector<double> s = softmax(value(v).values());
  auto pull = [v, s](Tape& t, const Matrix& g) {
    Matrix& gv = t.grad_of(v);
    double dot = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) dot += g[i] * s[i];
    for (std::size_t i = 0; i < s.size(); ++i) gv[i] += s[i] * (g[i] - dot);
  };
  return push(Matrix::column(std::move(s)), pull);
}

Tape::NodeId Tape::pick(NodeId v, std::size_t i) {
  if (i >= value(v).size()) throw invalid_input("pick: index out of range");
  const double x = value(v)[i];
  auto pull = [v, i](Tape& t, const Matrix& g) { t.grad_of(v)[i] += g[0]; };
  return push(Matrix::scalar(x), pull);
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  check_scalar(a, "mul");
  check_scalar(b, "mul");
  const double out = value(a)[0] * value(b)[0];
  auto pull = [a, b](Tape& t, const Matrix& g) {
    t.grad_of(a)[0] += g[0] * t.value(b)[0];
    t.grad_of(b)[0] += g[0] * t.value(a)[0];
  };
  return push(Matrix::scalar(out), pull);
}

Tape::NodeId Tape::affine_scalar(NodeId x, double a, double c) {
  check_scalar(x, "affine_scalar");
  const double out = a * value(x)[0] + c;
  auto pull = [x, a](Tape& t, const Matrix& g) { t.grad_of(x)[0] += a * g[0]; };
  return push(Matrix::scalar(out), pull);
}

Tape::NodeId Tape::weighted_sum(std::span<const NodeId> xs, std::span<const double> coeffs) {
  if (xs.size() != coeffs.size()) throw invalid_input("weighted_sum: size mismatch");
  double out = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    check_scalar(xs[i], "weighted_sum");
    out += coeffs[i] * value(xs[i])[0];
  }
  std::vector<NodeId> parents(xs.begin(), xs.end());
  std::vector<double> cs(coeffs.begin(), coeffs.end());
  auto pull = [parents, cs](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < parents.size(); ++i) t.grad_of(parents[i])[0] += cs[i] * g[0];
  };
  return push(Matrix::scalar(out), pull);
}

void Tape::backward(NodeId root) {
  check_scalar(root, "backward");
  for (Node& n : nodes_) n.grad.fill(0.0);
  nodes_[root].grad[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.pull) n.pull(*this, n.grad);
    if (n.param != nullptr) {
      for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
    }
  }
}

}  // namespace mexit
