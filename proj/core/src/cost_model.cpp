#include "mexit/cost_model.hpp"

#include <charconv>

#include "mexit/errors.hpp"

namespace mexit {

CostModel CostModel::uniform() { return CostModel{}; }

CostModel CostModel::ocr_aware(double surcharge) {
  CostModel cm;
  cm.name = "ocr-aware";
  cm.text_surcharge = surcharge;
  return cm;
}

CostModel CostModel::parse(std::string_view spec) {
  if (spec == "uniform") return uniform();
  if (spec == "ocr-aware") return ocr_aware();
  constexpr std::string_view prefix = "ocr-aware:";
  if (spec.substr(0, prefix.size()) == prefix) {
    const std::string_view rest = spec.substr(prefix.size());
    double surcharge = 0.0;
    const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), surcharge);
    if (ec != std::errc{} || ptr != rest.data() + rest.size() || surcharge < 0.0) {
      throw invalid_input("cost model: bad surcharge in '" + std::string(spec) + "'");
    }
    return ocr_aware(surcharge);
  }
  throw invalid_input("unknown cost model: " + std::string(spec));
}

void CostModel::validate() const {
  if (stem_cost < 0 || fusion_cost < 0 || block_cost < 0 || head_cost < 0 ||
      text_surcharge < 0) {
    throw invalid_input("cost model: costs must be >= 0");
  }
}

}  // namespace mexit
