#include "mexit/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "mexit/errors.hpp"
#include "mexit/rng.hpp"

namespace mexit {

void BackboneConfig::validate() const {
  if (encoder_layers < 1) throw invalid_input("backbone: encoder_layers must be >= 1");
  if (classes < 2) throw invalid_input("backbone: classes must be >= 2");
  if (text_dim < 1 || vision_dim < 1 || stem_width < 1 || fused_width < 1) {
    throw invalid_input("backbone: all widths must be >= 1");
  }
}

std::size_t AnchorPoint::depth() const {
  switch (kind) {
    case Kind::VisionStem: return 0;
    case Kind::TextStem: return 1;
    case Kind::PostFusion: return 2;
    case Kind::Encoder: return 2 + encoder_index;
  }
  return 0;
}

std::string AnchorPoint::str() const {
  switch (kind) {
    case Kind::VisionStem: return "VisionStem";
    case Kind::TextStem: return "TextStem";
    case Kind::PostFusion: return "PostFusion";
    case Kind::Encoder: return "Encoder(" + std::to_string(encoder_index) + ")";
  }
  return "?";
}

AnchorPoint AnchorPoint::parse(std::string_view text) {
  if (text == "VisionStem") return vision_stem();
  if (text == "TextStem") return text_stem();
  if (text == "PostFusion") return post_fusion();
  constexpr std::string_view prefix = "Encoder(";
  if (text.size() > prefix.size() + 1 && text.substr(0, prefix.size()) == prefix &&
      text.back() == ')') {
    const std::string_view digits = text.substr(prefix.size(), text.size() - prefix.size() - 1);
    std::size_t index = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), index);
    if (ec == std::errc{} && ptr == digits.data() + digits.size() && index >= 1) {
      return encoder(index);
    }
  }
  throw invalid_input("bad anchor: '" + std::string(text) + "'");
}

namespace {

std::vector<AnchorPoint> encoder_anchors(std::initializer_list<std::size_t> indices) {
  std::vector<AnchorPoint> out;
  out.push_back(AnchorPoint::post_fusion());
  for (std::size_t i : indices) out.push_back(AnchorPoint::encoder(i));
  return out;
}

}  // namespace

std::vector<AnchorPoint> ExitPlacement::resolve(std::size_t encoder_layers) const {
  if (variant != Variant::Custom && encoder_layers != 12) {
    throw invalid_input("placement '" + str() + "' is defined for the 12-layer backbone (L=" +
                        std::to_string(encoder_layers) + " given); use a custom placement");
  }
  switch (variant) {
    case Variant::IndependentAll: {
      std::vector<AnchorPoint> out{AnchorPoint::vision_stem(), AnchorPoint::text_stem()};
      for (std::size_t i = 1; i <= 12; ++i) out.push_back(AnchorPoint::encoder(i));
      return out;
    }
    case Variant::ConcatAll: {
      std::vector<AnchorPoint> out{AnchorPoint::post_fusion()};
      for (std::size_t i = 1; i <= 12; ++i) out.push_back(AnchorPoint::encoder(i));
      return out;
    }
    case Variant::ConcatSingle:
      return encoder_anchors({6});
    case Variant::ConcatQuarter:
      return encoder_anchors({1, 4, 8, 12});
    case Variant::ConcatAlternate:
      return encoder_anchors({2, 5, 9, 11});
    case Variant::Custom: {
      for (const AnchorPoint& a : custom_anchors) {
        if (a.kind == AnchorPoint::Kind::Encoder &&
            (a.encoder_index < 1 || a.encoder_index > encoder_layers)) {
          throw invalid_input("custom placement: anchor " + a.str() + " is beyond L=" +
                              std::to_string(encoder_layers));
        }
      }
      for (std::size_t i = 1; i < custom_anchors.size(); ++i) {
        if (custom_anchors[i].depth() <= custom_anchors[i - 1].depth()) {
          throw invalid_input("custom placement: anchors must be strictly ordered by depth");
        }
      }
      return custom_anchors;
    }
  }
  throw invalid_input("placement: unknown variant");
}

std::string ExitPlacement::str() const {
  switch (variant) {
    case Variant::IndependentAll: return "independent-all";
    case Variant::ConcatAll: return "concat-all";
    case Variant::ConcatSingle: return "concat-single";
    case Variant::ConcatQuarter: return "concat-quarter";
    case Variant::ConcatAlternate: return "concat-alternate";
    case Variant::Custom: {
      std::string out = "custom:";
      for (std::size_t i = 0; i < custom_anchors.size(); ++i) {
        if (i > 0) out += ",";
        out += custom_anchors[i].str();
      }
      return out;
    }
  }
  return "?";
}

ExitPlacement ExitPlacement::parse(std::string_view text) {
  if (text == "independent-all") return named(Variant::IndependentAll);
  if (text == "concat-all") return named(Variant::ConcatAll);
  if (text == "concat-single") return named(Variant::ConcatSingle);
  if (text == "concat-quarter") return named(Variant::ConcatQuarter);
  if (text == "concat-alternate") return named(Variant::ConcatAlternate);
  constexpr std::string_view prefix = "custom:";
  if (text.substr(0, prefix.size()) == prefix) {
    std::vector<AnchorPoint> anchors;
    std::string_view rest = text.substr(prefix.size());
    while (!rest.empty()) {
      const std::size_t comma = rest.find(',');
      const std::string_view token = rest.substr(0, comma);
      if (!token.empty()) anchors.push_back(AnchorPoint::parse(token));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    return custom(std::move(anchors));
  }
  if (text == "custom") return custom({});
  throw invalid_input("unknown placement: '" + std::string(text) + "'");
}

std::string to_string(ExitHeadKind kind) {
  return kind == ExitHeadKind::Ramp ? "ramp" : "gate";
}

ExitHeadKind parse_head_kind(std::string_view name) {
  if (name == "ramp") return ExitHeadKind::Ramp;
  if (name == "gate") return ExitHeadKind::Gate;
  throw invalid_input("unknown exit head kind: '" + std::string(name) + "'");
}

namespace {

Matrix init_weight(std::size_t rows, std::size_t cols, std::uint64_t seed,
                   const std::string& name) {
  Rng rng = Rng::substream(seed, "init/" + name);
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

}  // namespace

MultiExitNetwork MultiExitNetwork::build(const BackboneConfig& config,
                                         const ExitPlacement& placement, ExitHeadKind head_kind,
                                         std::uint64_t seed) {
  config.validate();
  MultiExitNetwork net;
  net.config_ = config;
  net.placement_ = placement;
  net.anchors_ = placement.resolve(config.encoder_layers);
  net.head_kind_ = head_kind;
  net.seed_ = seed;

  auto add_weight = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    net.params_.emplace_back(name, init_weight(rows, cols, seed, name));
    return net.params_.size() - 1;
  };
  auto add_bias = [&](const std::string& name, std::size_t rows) {
    net.params_.emplace_back(name, Matrix(rows, 1));
    return net.params_.size() - 1;
  };

  const std::size_t sw = config.stem_width;
  const std::size_t fw = config.fused_width;
  const std::size_t k = config.classes;

  net.layout_.vision_w = add_weight("vision_stem.W", sw, config.vision_dim);
  net.layout_.vision_b = add_bias("vision_stem.b", sw);
  net.layout_.text_w = add_weight("text_stem.W", sw, config.text_dim);
  net.layout_.text_b = add_bias("text_stem.b", sw);
  net.layout_.fusion_w = add_weight("fusion.W", fw, 2 * sw);
  net.layout_.fusion_b = add_bias("fusion.b", fw);
  for (std::size_t i = 1; i <= config.encoder_layers; ++i) {
    const std::string base = "encoder." + std::to_string(i);
    const std::size_t w = add_weight(base + ".W", fw, fw);
    const std::size_t b = add_bias(base + ".b", fw);
    net.layout_.encoder.emplace_back(w, b);
  }
  net.layout_.final_w = add_weight("final.W", k, fw);
  net.layout_.final_b = add_bias("final.b", k);

  for (std::size_t b = 0; b < net.anchors_.size(); ++b) {
    const std::size_t width =
        net.anchors_[b].kind == AnchorPoint::Kind::VisionStem ||
                net.anchors_[b].kind == AnchorPoint::Kind::TextStem
            ? sw
            : fw;
    const std::string base = "exit." + std::to_string(b);
    ExitHeadGroups heads;
    heads.head_w = add_weight(base + ".head.W", k, width);
    heads.head_b = add_bias(base + ".head.b", k);
    if (head_kind == ExitHeadKind::Gate) {
      heads.gate_w = add_weight(base + ".gate.W", 1, width);
      heads.gate_b = add_bias(base + ".gate.b", 1);
    }
    net.layout_.exits.push_back(heads);
  }

  net.build_subgraph_index();
  return net;
}

std::vector<std::size_t> MultiExitNetwork::anchor_closure(const AnchorPoint& anchor) const {
  std::vector<std::size_t> out;
  switch (anchor.kind) {
    case AnchorPoint::Kind::VisionStem:
      out = {layout_.vision_w, layout_.vision_b};
      break;
    case AnchorPoint::Kind::TextStem:
      out = {layout_.text_w, layout_.text_b};
      break;
    case AnchorPoint::Kind::PostFusion:
    case AnchorPoint::Kind::Encoder:
      out = {layout_.vision_w, layout_.vision_b, layout_.text_w,
             layout_.text_b,   layout_.fusion_w, layout_.fusion_b};
      if (anchor.kind == AnchorPoint::Kind::Encoder) {
        for (std::size_t i = 0; i < anchor.encoder_index; ++i) {
          out.push_back(layout_.encoder[i].first);
          out.push_back(layout_.encoder[i].second);
        }
      }
      break;
  }
  return out;
}

void MultiExitNetwork::build_subgraph_index() {
  std::vector<bool> covered(params_.size(), false);
  subgraphs_.clear();
  for (std::size_t b = 0; b < anchors_.size(); ++b) {
    for (std::size_t idx : anchor_closure(anchors_[b])) covered[idx] = true;
    const ExitHeadGroups& heads = layout_.exits[b];
    covered[heads.head_w] = true;
    covered[heads.head_b] = true;
    if (head_kind_ == ExitHeadKind::Gate) {
      covered[heads.gate_w] = true;
      covered[heads.gate_b] = true;
    }
    std::vector<std::size_t> groups;
    for (std::size_t i = 0; i < covered.size(); ++i) {
      if (covered[i]) groups.push_back(i);
    }
    subgraphs_.push_back(std::move(groups));
  }
  // Final-classifier sentinel: everything but the final head itself.
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (i != layout_.final_w && i != layout_.final_b) all.push_back(i);
  }
  subgraphs_.push_back(std::move(all));
}

std::size_t MultiExitNetwork::parameter_count() const {
  std::size_t total = 0;
  for (const ParameterGroup& g : params_) total += g.size();
  return total;
}

const std::vector<std::size_t>& MultiExitNetwork::subgraph_group_indices(std::size_t b) const {
  if (b >= subgraphs_.size()) throw invalid_input("subgraph index out of range");
  return subgraphs_[b];
}

double MultiExitNetwork::subgraph_param_fraction(std::size_t b) const {
  if (b > anchors_.size()) throw invalid_input("subgraph_param_fraction: exit index out of range");
  if (b == anchors_.size()) return 1.0;  // final classifier uses the whole network
  std::size_t used = 0;
  for (std::size_t idx : subgraphs_[b]) used += params_[idx].size();
  return static_cast<double>(used) / static_cast<double>(parameter_count());
}

double subgraph_weight_from_fraction(double fraction) {
  if (!(fraction > 0.0)) {
    throw invalid_input("subgraph weight: degenerate network with parameter fraction <= 0");
  }
  return 1.0 / fraction;
}

namespace {

// Which backbone components the consulted anchors have touched so far.
struct Coverage {
  bool vision = false;
  bool text = false;
  bool fusion = false;
  std::size_t encoders = 0;

  void add(const AnchorPoint& a) {
    switch (a.kind) {
      case AnchorPoint::Kind::VisionStem: vision = true; break;
      case AnchorPoint::Kind::TextStem: text = true; break;
      case AnchorPoint::Kind::PostFusion:
        vision = text = fusion = true;
        break;
      case AnchorPoint::Kind::Encoder:
        vision = text = fusion = true;
        encoders = std::max(encoders, a.encoder_index);
        break;
    }
  }

  double cost(const CostModel& cm) const {
    double c = 0.0;
    if (vision) c += cm.stem_cost;
    if (text) c += cm.stem_cost + cm.text_surcharge;
    if (fusion) c += cm.fusion_cost;
    c += static_cast<double>(encoders) * cm.block_cost;
    return c;
  }
};

double full_network_cost(const CostModel& cm, std::size_t encoder_layers, std::size_t exits) {
  return 2.0 * cm.stem_cost + cm.text_surcharge + cm.fusion_cost +
         static_cast<double>(encoder_layers) * cm.block_cost +
         static_cast<double>(exits + 1) * cm.head_cost;
}

}  // namespace

double MultiExitNetwork::exit_cost_fraction(std::size_t b, const CostModel& cm) const {
  cm.validate();
  const std::size_t exits = anchors_.size();
  if (b > exits) throw invalid_input("exit_cost_fraction: exit index out of range");
  const double full = full_network_cost(cm, config_.encoder_layers, exits);
  if (!(full > 0.0)) throw invalid_input("cost model: full-network cost must be > 0");
  if (b == exits) return 1.0;
  Coverage cov;
  for (std::size_t i = 0; i <= b; ++i) cov.add(anchors_[i]);
  const double cost = cov.cost(cm) + static_cast<double>(b + 1) * cm.head_cost;
  return cost / full;
}

std::vector<double> MultiExitNetwork::cost_fractions(const CostModel& cm) const {
  std::vector<double> out;
  out.reserve(anchors_.size() + 1);
  for (std::size_t b = 0; b < anchors_.size(); ++b) out.push_back(exit_cost_fraction(b, cm));
  out.push_back(1.0);
  return out;
}

template <typename LeafFn>
ForwardNodes MultiExitNetwork::run_forward(Tape& tape, const MultimodalSample& sample,
                                           LeafFn leaf) const {
  if (sample.text.size() != config_.text_dim || sample.vision.size() != config_.vision_dim) {
    throw invalid_input("forward: sample dimensions do not match backbone config");
  }
  const Activation act = config_.activation;

  const auto vision_in = tape.constant(Matrix::column(sample.vision));
  const auto text_in = tape.constant(Matrix::column(sample.text));
  const auto vis =
      tape.activation(tape.affine(leaf(layout_.vision_w), vision_in, leaf(layout_.vision_b)), act);
  const auto txt =
      tape.activation(tape.affine(leaf(layout_.text_w), text_in, leaf(layout_.text_b)), act);
  const auto fused =
      tape.activation(tape.affine(leaf(layout_.fusion_w), tape.concat(vis, txt), leaf(layout_.fusion_b)), act);

  std::vector<Tape::NodeId> states;  // states[i] = representation after encoder block i
  states.reserve(config_.encoder_layers + 1);
  states.push_back(fused);
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    const auto& [w, b] = layout_.encoder[i];
    const auto delta = tape.activation(tape.affine(leaf(w), states.back(), leaf(b)), act);
    states.push_back(tape.add(states.back(), delta));
  }

  ForwardNodes out;
  for (std::size_t b = 0; b < anchors_.size(); ++b) {
    const AnchorPoint& anchor = anchors_[b];
    Tape::NodeId rep = 0;
    switch (anchor.kind) {
      case AnchorPoint::Kind::VisionStem: rep = vis; break;
      case AnchorPoint::Kind::TextStem: rep = txt; break;
      case AnchorPoint::Kind::PostFusion: rep = states[0]; break;
      case AnchorPoint::Kind::Encoder: rep = states[anchor.encoder_index]; break;
      default: throw invalid_input("forward: bad anchor");
    }
    const ExitHeadGroups& heads = layout_.exits[b];
    ForwardNodes::Exit exit;
    exit.logits = tape.affine(leaf(heads.head_w), rep, leaf(heads.head_b));
    if (head_kind_ == ExitHeadKind::Gate) {
      exit.gate_logit = tape.affine(leaf(heads.gate_w), rep, leaf(heads.gate_b));
    }
    out.exits.push_back(exit);
  }
  out.final_logits = tape.affine(leaf(layout_.final_w), states.back(), leaf(layout_.final_b));
  return out;
}

ForwardNodes MultiExitNetwork::forward_on_tape(Tape& tape, const MultimodalSample& sample) {
  std::vector<Tape::NodeId> cache(params_.size(), UINT32_MAX);
  auto leaf = [&](std::size_t group) {
    if (cache[group] == UINT32_MAX) cache[group] = tape.parameter(params_[group]);
    return cache[group];
  };
  return run_forward(tape, sample, leaf);
}

ForwardNodes MultiExitNetwork::forward_on_tape(Tape& tape, const MultimodalSample& sample) const {
  std::vector<Tape::NodeId> cache(params_.size(), UINT32_MAX);
  auto leaf = [&](std::size_t group) {
    if (cache[group] == UINT32_MAX) cache[group] = tape.constant(params_[group].value);
    return cache[group];
  };
  return run_forward(tape, sample, leaf);
}

ForwardTrace MultiExitNetwork::forward_full(const MultimodalSample& sample,
                                            const CostModel& cm) const {
  Tape tape;
  const ForwardNodes nodes = forward_on_tape(tape, sample);
  ForwardTrace trace;
  for (const auto& exit : nodes.exits) {
    ExitRecord record;
    record.logits = tape.value(exit.logits).values();
    if (exit.gate_logit.has_value()) record.gate_logit = tape.value(*exit.gate_logit)[0];
    trace.exits.push_back(std::move(record));
  }
  trace.final_logits = tape.value(nodes.final_logits).values();
  trace.cost_fractions = cost_fractions(cm);
  return trace;
}

}  // namespace mexit
