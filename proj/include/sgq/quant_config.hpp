#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgq/random.hpp"

namespace sgq {

enum class Granularity { kUniform, kLwq, kCwq, kLwqCwq, kLwqCwqTaq };
enum class Component { kAttention, kCombination };

std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view text);
std::string_view to_string(Component c);

bool layer_aware(Granularity g);
bool component_aware(Granularity g);
bool topology_aware(Granularity g);

/// Bit width that stands for "not quantized" (32-bit float storage).
constexpr int kFullPrecisionBits = 32;

inline constexpr std::array<int, 5> kDefaultTemplate = {1, 2, 4, 8, 16};
inline constexpr std::array<int, 4> kDefaultBucketBits = {4, 3, 2, 1};
constexpr std::size_t kNumBuckets = 4;

/// Degree split points [D1, D2, D3]; bucket j covers [D_j, D_{j+1}) with
/// D0 = 0 and D4 = +inf.
class DegreeBuckets {
 public:
  DegreeBuckets() = default;
  /// Throws std::invalid_argument unless 0 < D1 < D2 < D3.
  explicit DegreeBuckets(std::array<std::uint32_t, 3> split_points);

  /// Quartiles (linear interpolation) of `degrees`, rounded up and bumped to
  /// be strictly increasing and positive.
  static DegreeBuckets from_quartiles(std::span<const std::uint32_t> degrees);

  std::size_t bucket_of(std::uint32_t degree) const;
  const std::array<std::uint32_t, 3>& split_points() const { return split_points_; }
  bool operator==(const DegreeBuckets&) const = default;

 private:
  std::array<std::uint32_t, 3> split_points_{1, 2, 3};
};

/// Maps a degree to the bit width of its bucket. `bucket_bits` must have four
/// non-increasing entries (more bits for low-degree nodes).
int fbit(std::uint32_t degree, const DegreeBuckets& buckets, std::span<const int> bucket_bits);

/// A full bit assignment over (layer, component, degree bucket).
///
/// Bits live in a flat slot vector whose order is canonical per granularity:
///   UNIFORM      [q]
///   LWQ          [q_0, ..., q_{n-1}]
///   CWQ          [q_att, q_com]
///   LWQ_CWQ      [q_0att, q_0com, q_1att, q_1com, ...]
///   LWQ_CWQ_TAQ  [q_0att, q_0com_b0..b3, q_1att, q_1com_b0..b3, ...]
/// Layers are 0-based. Layer-agnostic granularities report depth() == 0 and
/// apply to a model of any depth.
class QuantConfig {
 public:
  /// Uniform 8-bit over the default template.
  QuantConfig() = default;

  static QuantConfig uniform(int bits, std::vector<int> bits_template = {kDefaultTemplate.begin(), kDefaultTemplate.end()});
  static QuantConfig full_precision();
  static QuantConfig layer_wise(std::vector<int> per_layer,
                                std::vector<int> bits_template = {kDefaultTemplate.begin(), kDefaultTemplate.end()});
  static QuantConfig component_wise(int att, int com,
                                    std::vector<int> bits_template = {kDefaultTemplate.begin(), kDefaultTemplate.end()});
  /// One (att, com) pair per layer.
  static QuantConfig layer_component(std::span<const std::array<int, 2>> per_layer,
                                     std::vector<int> bits_template = {kDefaultTemplate.begin(), kDefaultTemplate.end()});
  static QuantConfig layer_component_topology(std::span<const int> att_per_layer,
                                              std::span<const std::array<int, 4>> com_buckets_per_layer,
                                              DegreeBuckets buckets, std::vector<int> bits_template);
  /// Validating constructor over the canonical slot vector.
  static QuantConfig from_slots(Granularity g, std::size_t depth, std::vector<int> slots, std::vector<int> bits_template,
                                std::optional<DegreeBuckets> buckets = std::nullopt);

  Granularity granularity() const { return granularity_; }
  std::size_t depth() const { return depth_; }
  const std::vector<int>& slots() const { return slots_; }
  const std::vector<int>& bits_template() const { return template_; }
  const std::optional<DegreeBuckets>& buckets() const { return buckets_; }

  /// Throws std::out_of_range when a layer-aware config is queried past its depth.
  int bits_for(std::size_t layer, Component component, std::uint32_t degree) const;

  /// Per-bucket combination bits of one layer (TAQ only).
  std::array<int, 4> bucket_bits(std::size_t layer) const;

  /// Compact identifier, e.g. "lwq_cwq:2-4-2-2".
  std::string id() const;

  bool operator==(const QuantConfig&) const = default;

 private:
  std::size_t layer_stride() const;

  Granularity granularity_ = Granularity::kUniform;
  std::size_t depth_ = 0;
  std::vector<int> slots_{8};
  std::vector<int> template_{kDefaultTemplate.begin(), kDefaultTemplate.end()};
  std::optional<DegreeBuckets> buckets_;
};

std::size_t slot_count(Granularity g, std::size_t depth);

/// Fixed-order flattening of the slots, suitable as regression features.
std::vector<double> encode_features(const QuantConfig& cfg);

/// JSON text with keys granularity, template, split_points (TAQ only), bits.
std::string serialize_config(const QuantConfig& cfg);
/// Throws FormatError on malformed input, unknown keys, or bits outside the template.
QuantConfig parse_config(std::string_view text);
QuantConfig load_config(const std::filesystem::path& path);
void save_config(const QuantConfig& cfg, const std::filesystem::path& path);

/// The set of configs a search may draw from.
struct SearchSpace {
  Granularity granularity = Granularity::kUniform;
  std::size_t depth = 2;
  std::vector<int> bit_choices{kDefaultTemplate.begin(), kDefaultTemplate.end()};
  std::optional<DegreeBuckets> buckets;

  std::size_t num_slots() const { return slot_count(granularity, depth); }
  /// Number of distinct configs (saturates at SIZE_MAX).
  std::size_t size() const;
};

/// Every slot drawn uniformly from the choices; TAQ bucket draws are sorted
/// non-increasing so the Fbit ordering holds.
QuantConfig random_config(const SearchSpace& space, Rng& rng);
QuantConfig random_config(const SearchSpace& space, std::uint64_t seed);

/// All configs of a space in lexicographic slot order. Throws when size() > limit.
std::vector<QuantConfig> enumerate_space(const SearchSpace& space, std::size_t limit = 1'000'000);

/// Shapes of the quantized feature tensors of one model on one graph.
struct FeatureLayout {
  std::vector<std::size_t> embedding_dims;  // input width of each layer
  std::vector<std::uint32_t> degrees;       // raw degree per node (no self-loops)
  bool stores_attention = false;
  std::size_t attention_edges = 0;  // directed edges of the propagation graph

  std::size_t depth() const { return embedding_dims.size(); }
  std::size_t num_nodes() const { return degrees.size(); }
};

enum class AttentionAccounting { kSparseEdges, kDenseNxN };

/// One homogeneous block of quantized feature elements.
struct ElementGroup {
  std::size_t layer;
  Component component;
  int bucket;  // -1 when the group is not degree-bucketed
  int bits;
  std::uint64_t elements;
};

std::vector<ElementGroup> element_groups(const QuantConfig& cfg, const FeatureLayout& layout,
                                         AttentionAccounting mode = AttentionAccounting::kSparseEdges);

/// Element-count-weighted mean bit width (sparse attention accounting).
double average_bits(const QuantConfig& cfg, const FeatureLayout& layout);

}  // namespace sgq
