#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mexit/autodiff.hpp"
#include "mexit/cost_model.hpp"
#include "mexit/data.hpp"

namespace mexit {

struct BackboneConfig {
  std::size_t text_dim = 24;
  std::size_t vision_dim = 24;
  std::size_t stem_width = 32;
  std::size_t fused_width = 32;
  std::size_t encoder_layers = 12;  // L
  std::size_t classes = 16;         // K
  Activation activation = Activation::Tanh;

  void validate() const;
};

/// A point in the backbone where an exit head can attach. Depth gives the
/// serial consultation order: VisionStem < TextStem < PostFusion < Encoder(i).
/// The vision stem comes first because it is the cheap branch to try.
struct AnchorPoint {
  enum class Kind { VisionStem, TextStem, PostFusion, Encoder };

  Kind kind = Kind::PostFusion;
  std::size_t encoder_index = 0;  // 1-based, Encoder only

  static AnchorPoint vision_stem() { return {Kind::VisionStem, 0}; }
  static AnchorPoint text_stem() { return {Kind::TextStem, 0}; }
  static AnchorPoint post_fusion() { return {Kind::PostFusion, 0}; }
  static AnchorPoint encoder(std::size_t i) { return {Kind::Encoder, i}; }

  std::size_t depth() const;
  std::string str() const;  // "VisionStem" | "TextStem" | "PostFusion" | "Encoder(i)"
  static AnchorPoint parse(std::string_view text);

  bool operator==(const AnchorPoint&) const = default;
};

/// The named variants reproduce the fixed 12-layer layouts (exit counts
/// 14 / 13 / 2 / 5 / 5); Custom takes any strictly depth-ordered anchor list.
struct ExitPlacement {
  enum class Variant {
    IndependentAll,
    ConcatAll,
    ConcatSingle,
    ConcatQuarter,
    ConcatAlternate,
    Custom,
  };

  Variant variant = Variant::ConcatQuarter;
  std::vector<AnchorPoint> custom_anchors;

  static ExitPlacement named(Variant v) { return {v, {}}; }
  static ExitPlacement custom(std::vector<AnchorPoint> anchors) {
    return {Variant::Custom, std::move(anchors)};
  }

  std::vector<AnchorPoint> resolve(std::size_t encoder_layers) const;

  std::string str() const;
  static ExitPlacement parse(std::string_view text);
};

enum class ExitHeadKind { Ramp, Gate };

std::string to_string(ExitHeadKind kind);
ExitHeadKind parse_head_kind(std::string_view name);

struct ExitRecord {
  std::vector<double> logits;        // K-way: ramp output or gate's paired head
  std::optional<double> gate_logit;  // gates only
};

struct ForwardTrace {
  std::vector<ExitRecord> exits;      // length B
  std::vector<double> final_logits;   // length K
  std::vector<double> cost_fractions; // length B+1, strictly increasing, last == 1.0
};

/// Tape handles for one sample's forward pass (training path).
struct ForwardNodes {
  struct Exit {
    Tape::NodeId logits = 0;                  // K-way head
    std::optional<Tape::NodeId> gate_logit;   // gates only
  };
  std::vector<Exit> exits;
  Tape::NodeId final_logits = 0;
};

/// Multimodal backbone with B exit heads.
///
/// Topology: per-modality affine stem + activation, concatenation followed by
/// an affine fusion layer + activation, L residual affine blocks, and a final
/// affine classifier. Exit heads are single affine maps from their anchor's
/// representation; gates add a width->1 exit-probability map next to the
/// paired K-way head.
class MultiExitNetwork {
 public:
  static MultiExitNetwork build(const BackboneConfig& config, const ExitPlacement& placement,
                                ExitHeadKind head_kind, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  const ExitPlacement& placement() const { return placement_; }
  const std::vector<AnchorPoint>& anchors() const { return anchors_; }
  ExitHeadKind head_kind() const { return head_kind_; }
  std::uint64_t seed() const { return seed_; }

  std::size_t exit_count() const { return anchors_.size(); }  // B
  std::size_t parameter_count() const;                        // |theta|

  std::vector<ParameterGroup>& parameters() { return params_; }
  const std::vector<ParameterGroup>& parameters() const { return params_; }

  /// Group indices of the subgraph consulted up to exit b (backbone closure
  /// of anchors 0..b plus their heads). b == exit_count() is the sentinel for
  /// the final classifier and covers everything except the final head.
  const std::vector<std::size_t>& subgraph_group_indices(std::size_t b) const;

  /// |theta_subgraph| / |theta|; the final-classifier sentinel returns 1.0.
  double subgraph_param_fraction(std::size_t b) const;

  double exit_cost_fraction(std::size_t b, const CostModel& cm) const;
  /// All B+1 fractions (exits in order, then the final classifier at 1.0).
  std::vector<double> cost_fractions(const CostModel& cm) const;

  ForwardTrace forward_full(const MultimodalSample& sample,
                            const CostModel& cm = CostModel::uniform()) const;

  /// Training path: parameter leaves track gradients.
  ForwardNodes forward_on_tape(Tape& tape, const MultimodalSample& sample);
  /// Inference path: parameters enter the tape as constants.
  ForwardNodes forward_on_tape(Tape& tape, const MultimodalSample& sample) const;

  /// Index of the group holding the final classifier weights/bias.
  std::size_t final_weight_group() const { return layout_.final_w; }
  std::size_t final_bias_group() const { return layout_.final_b; }

 private:
  struct ExitHeadGroups {
    std::size_t head_w = 0;
    std::size_t head_b = 0;
    std::size_t gate_w = 0;  // gates only
    std::size_t gate_b = 0;
  };
  struct Layout {
    std::size_t vision_w = 0, vision_b = 0;
    std::size_t text_w = 0, text_b = 0;
    std::size_t fusion_w = 0, fusion_b = 0;
    std::vector<std::pair<std::size_t, std::size_t>> encoder;
    std::size_t final_w = 0, final_b = 0;
    std::vector<ExitHeadGroups> exits;
  };

  MultiExitNetwork() = default;

  template <typename LeafFn>
  ForwardNodes run_forward(Tape& tape, const MultimodalSample& sample, LeafFn leaf) const;

  void build_subgraph_index();
  std::vector<std::size_t> anchor_closure(const AnchorPoint& anchor) const;

  BackboneConfig config_;
  ExitPlacement placement_;
  std::vector<AnchorPoint> anchors_;
  ExitHeadKind head_kind_ = ExitHeadKind::Ramp;
  std::uint64_t seed_ = 0;
  std::vector<ParameterGroup> params_;
  Layout layout_;
  std::vector<std::vector<std::size_t>> subgraphs_;  // B+1 entries
};

/// 1 / subgraph_param_fraction. Throws invalid_input when the fraction is
/// not strictly positive.
double subgraph_weight_from_fraction(double fraction);

}  // namespace mexit
