#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgq/model.hpp"
#include "sgq/quant_config.hpp"

namespace sgq {

/// Bytes per reported megabyte.
constexpr double kBytesPerMb = 1e6;

struct MemoryReport {
  std::uint64_t total_feature_bits = 0;
  std::vector<std::uint64_t> per_layer_bits;
  std::uint64_t weight_bits = 0;
  double average_bits = 0.0;
  double saving_ratio_vs_fp32 = 1.0;

  double feature_mb() const { return static_cast<double>(total_feature_bits) / 8.0 / kBytesPerMb; }
};

/// Embedding bits sum D_k * bits over nodes; attention bits count one value
/// per directed propagation edge (or N^2 in dense mode). GCN stores no
/// attention.
MemoryReport feature_memory_bits(const GnnModel& model, const FeatureLayout& layout, const QuantConfig& cfg,
                                 AttentionAccounting mode = AttentionAccounting::kSparseEdges);

/// 32 bits per weight element.
std::uint64_t weight_memory_bits(const GnnModel& model);

double saving_ratio(const MemoryReport& full, const MemoryReport& reduced);

}  // namespace sgq
