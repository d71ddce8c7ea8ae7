#pragma once

#include <string>
#include <string_view>

namespace mexit {

/// Relative latency accounting for the backbone components.
///
/// Exit latency is serial: reaching exit b costs every backbone component
/// any consulted anchor depends on, plus one head unit per consulted exit.
/// The full-network cost adds all exit heads and the final classifier head,
/// so the final classifier sits at cost fraction exactly 1.
struct CostModel {
  std::string name = "uniform";
  double stem_cost = 1.0;    // per modality stem
  double fusion_cost = 0.5;
  double block_cost = 1.0;   // per encoder block
  double head_cost = 0.1;    // every classifier head, exits and final alike
  double text_surcharge = 0.0;  // extra block-equivalents on the text path (OCR)

  static CostModel uniform();
  static CostModel ocr_aware(double surcharge = 3.0);

  /// "uniform" | "ocr-aware" | "ocr-aware:<surcharge>"
  static CostModel parse(std::string_view spec);

  void validate() const;  // all costs >= 0
};

}  // namespace mexit
