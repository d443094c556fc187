#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sgq/matrix.hpp"

namespace sgq {

/// Raised for malformed on-disk artifacts (datasets, checkpoints, config files).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NodeId = std::uint32_t;
using Edge = std::pair<NodeId, NodeId>;

/// Compressed-row adjacency. Row v lists the neighbors u of v in strictly
/// increasing order; the edge index e in [row_ptr[v], row_ptr[v+1]) is the
/// position used by every per-edge array (attention, edge scores).
class CsrGraph {
 public:
  CsrGraph() = default;
  CsrGraph(std::size_t num_nodes, std::vector<std::size_t> row_ptr, std::vector<NodeId> col_idx);

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return col_idx_.size(); }
  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<NodeId>& col_idx() const { return col_idx_; }

  std::span<const NodeId> neighbors(NodeId v) const {
    return {col_idx_.data() + row_ptr_[v], row_ptr_[v + 1] - row_ptr_[v]};
  }
  bool has_edge(NodeId u, NodeId v) const;

  /// Destination (row) of every edge, i.e. the inverse of row_ptr.
  std::vector<NodeId> edge_rows() const;

  bool operator==(const CsrGraph&) const = default;

 private:
  std::size_t num_nodes_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<NodeId> col_idx_;
};

/// Builds a sorted, deduplicated CSR. Throws std::out_of_range naming the
/// offending edge when an index is >= num_nodes.
CsrGraph build_csr(std::span<const Edge> edges, std::size_t num_nodes, bool symmetrize);

std::size_t degree(const CsrGraph& graph, NodeId v);
std::vector<std::uint32_t> degrees(const CsrGraph& graph);

/// Adds (v, v) for every node. Idempotent.
CsrGraph add_self_loops(const CsrGraph& graph);

enum class Split { kTrain, kVal, kTest };

struct Dataset {
  CsrGraph graph;
  Matrix<float> features;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint8_t> train_mask;
  std::vector<std::uint8_t> val_mask;
  std::vector<std::uint8_t> test_mask;
  std::size_t num_classes = 0;

  std::size_t num_nodes() const { return graph.num_nodes(); }
  std::size_t feature_dim() const { return features.cols(); }
  const std::vector<std::uint8_t>& mask(Split split) const;

  /// Throws FormatError on any invariant violation.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

std::size_t mask_count(std::span<const std::uint8_t> mask);

/// SGQD v1 container. Little-endian; see README for the byte layout.
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::span<const std::byte> bytes);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
std::vector<std::byte> serialize_dataset(const Dataset& dataset);

}  // namespace sgq
