#include "sgq/memory.hpp"

#include <stdexcept>

namespace sgq {

MemoryReport feature_memory_bits(const GnnModel& model, const FeatureLayout& layout, const QuantConfig& cfg,
                                 AttentionAccounting mode) {
  MemoryReport report;
  report.per_layer_bits.assign(layout.depth(), 0);
  std::uint64_t elements = 0, fp_bits = 0;
  for (const auto& g : element_groups(cfg, layout, mode)) {
    const std::uint64_t bits = static_cast<std::uint64_t>(g.bits) * g.elements;
    report.per_layer_bits[g.layer] += bits;
    report.total_feature_bits += bits;
    elements += g.elements;
    fp_bits += static_cast<std::uint64_t>(kFullPrecisionBits) * g.elements;
  }
  report.weight_bits = weight_memory_bits(model);
  report.average_bits = elements == 0 ? 0.0 : static_cast<double>(report.total_feature_bits) / static_cast<double>(elements);
  report.saving_ratio_vs_fp32 =
      report.total_feature_bits == 0 ? 1.0 : static_cast<double>(fp_bits) / static_cast<double>(report.total_feature_bits);
  return report;
}

std::uint64_t weight_memory_bits(const GnnModel& model) {
  return static_cast<std::uint64_t>(kFullPrecisionBits) * model.num_weights();
}

double saving_ratio(const MemoryReport& full, const MemoryReport& reduced) {
  if (reduced.total_feature_bits == 0) throw std::invalid_argument("saving_ratio: reduced report has no feature bits");
  return static_cast<double>(full.total_feature_bits) / static_cast<double>(reduced.total_feature_bits);
}

}  // namespace sgq
