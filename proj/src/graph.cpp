#include "sgq/graph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "byte_io.hpp"

namespace sgq {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

CsrGraph::CsrGraph(std::size_t num_nodes, std::vector<std::size_t> row_ptr, std::vector<NodeId> col_idx)
    : num_nodes_(num_nodes), row_ptr_(std::move(row_ptr)), col_idx_(std::move(col_idx)) {
  if (row_ptr_.size() != num_nodes_ + 1 || row_ptr_.front() != 0 || row_ptr_.back() != col_idx_.size()) {
    throw std::invalid_argument("CsrGraph: row_ptr does not frame col_idx");
  }
  for (std::size_t v = 0; v < num_nodes_; ++v) {
    if (row_ptr_[v] > row_ptr_[v + 1]) throw std::invalid_argument("CsrGraph: row_ptr decreases at row " + std::to_string(v));
    for (std::size_t e = row_ptr_[v]; e < row_ptr_[v + 1]; ++e) {
      if (col_idx_[e] >= num_nodes_) throw std::invalid_argument("CsrGraph: neighbor index out of range");
      if (e > row_ptr_[v] && col_idx_[e] <= col_idx_[e - 1]) {
        throw std::invalid_argument("CsrGraph: row " + std::to_string(v) + " is not strictly increasing");
      }
    }
  }
}

bool CsrGraph::has_edge(NodeId u, NodeId v) const {
  auto row = neighbors(v);
  return std::binary_search(row.begin(), row.end(), u);
}

std::vector<NodeId> CsrGraph::edge_rows() const {
  std::vector<NodeId> rows(num_edges());
  for (std::size_t v = 0; v < num_nodes_; ++v) {
    std::fill(rows.begin() + static_cast<std::ptrdiff_t>(row_ptr_[v]),
              rows.begin() + static_cast<std::ptrdiff_t>(row_ptr_[v + 1]), static_cast<NodeId>(v));
  }
  return rows;
}

CsrGraph build_csr(std::span<const Edge> edges, std::size_t num_nodes, bool symmetrize) {
  // Row v holds the sources u of edges (u, v).
  std::vector<std::pair<NodeId, NodeId>> entries;  // (row, col)
  entries.reserve(edges.size() * (symmetrize ? 2 : 1));
  for (const auto& [src, dst] : edges) {
    if (src >= num_nodes || dst >= num_nodes) {
      throw std::out_of_range("build_csr: edge (" + std::to_string(src) + "," + std::to_string(dst) +
                              ") out of range for " + std::to_string(num_nodes) + " nodes");
    }
    entries.emplace_back(dst, src);
    if (symmetrize) entries.emplace_back(src, dst);
  }
  std::sort(entries.begin(), entries.end());
  entries.erase(std::unique(entries.begin(), entries.end()), entries.end());

  std::vector<std::size_t> row_ptr(num_nodes + 1, 0);
  std::vector<NodeId> col_idx;
  col_idx.reserve(entries.size());
  for (const auto& [row, col] : entries) {
    ++row_ptr[row + 1];
    col_idx.push_back(col);
  }
  for (std::size_t v = 0; v < num_nodes; ++v) row_ptr[v + 1] += row_ptr[v];
  return CsrGraph(num_nodes, std::move(row_ptr), std::move(col_idx));
}

std::size_t degree(const CsrGraph& graph, NodeId v) {
  if (v >= graph.num_nodes()) {
    throw std::out_of_range("degree: node " + std::to_string(v) + " out of range");
  }
  return graph.row_ptr()[v + 1] - graph.row_ptr()[v];
}

std::vector<std::uint32_t> degrees(const CsrGraph& graph) {
  std::vector<std::uint32_t> out(graph.num_nodes());
  for (std::size_t v = 0; v < graph.num_nodes(); ++v) {
    out[v] = static_cast<std::uint32_t>(graph.row_ptr()[v + 1] - graph.row_ptr()[v]);
  }
  return out;
}

CsrGraph add_self_loops(const CsrGraph& graph) {
  const std::size_t n = graph.num_nodes();
  std::vector<std::size_t> row_ptr(n + 1, 0);
  std::vector<NodeId> col_idx;
  col_idx.reserve(graph.num_edges() + n);
  for (std::size_t v = 0; v < n; ++v) {
    auto row = graph.neighbors(static_cast<NodeId>(v));
    auto pos = std::lower_bound(row.begin(), row.end(), static_cast<NodeId>(v));
    col_idx.insert(col_idx.end(), row.begin(), pos);
    col_idx.push_back(static_cast<NodeId>(v));
    if (pos != row.end() && *pos == v) ++pos;
    col_idx.insert(col_idx.end(), pos, row.end());
    row_ptr[v + 1] = col_idx.size();
  }
  return CsrGraph(n, std::move(row_ptr), std::move(col_idx));
}

const std::vector<std::uint8_t>& Dataset::mask(Split split) const {
  switch (split) {
    case Split::kTrain: return train_mask;
    case Split::kVal: return val_mask;
    case Split::kTest: return test_mask;
  }
  throw std::invalid_argument("unknown split");
}

std::size_t mask_count(std::span<const std::uint8_t> mask) {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

void Dataset::validate() const {
  const std::size_t n = graph.num_nodes();
  if (features.rows() != n) {
    throw FormatError("feature rows (" + std::to_string(features.rows()) + ") != node count (" + std::to_string(n) + ")");
  }
  if (labels.size() != n) throw FormatError("label count != node count");
  for (std::size_t v = 0; v < n; ++v) {
    if (labels[v] >= num_classes) {
      throw FormatError("label " + std::to_string(labels[v]) + " of node " + std::to_string(v) + " out of range");
    }
  }
  for (const auto* m : {&train_mask, &val_mask, &test_mask}) {
    if (m->size() != n) throw FormatError("mask length != node count");
    for (auto b : *m) {
      if (b > 1) throw FormatError("mask byte not 0/1");
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (train_mask[v] + val_mask[v] + test_mask[v] > 1) {
      throw FormatError("masks overlap at node " + std::to_string(v));
    }
  }
}

namespace {

constexpr char kDatasetMagic[4] = {'S', 'G', 'Q', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;

using detail::append_raw;
using detail::ByteReader;

}  // namespace

Dataset parse_dataset(std::span<const std::byte> bytes) {
  ByteReader in(bytes);
  char magic[4];
  in.read(magic, 4, "header");
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) throw FormatError("bad magic");
  const auto version = in.u32("header");
  if (version != kDatasetVersion) throw FormatError("unsupported version " + std::to_string(version));
  const std::size_t n = in.u32("header");
  const std::size_t dim = in.u32("header");
  const std::size_t num_classes = in.u32("header");
  const std::size_t num_edges = in.u32("header");

  in.require(num_edges * 8, "edge list");
  std::vector<Edge> edges(num_edges);
  for (auto& [src, dst] : edges) {
    src = in.u32("edge list");
    dst = in.u32("edge list");
    if (src >= n || dst >= n) {
      throw FormatError("edge (" + std::to_string(src) + "," + std::to_string(dst) + ") out of range");
    }
  }

  Dataset ds;
  ds.num_classes = num_classes;
  ds.graph = build_csr(edges, n, true);
  ds.features = Matrix<float>(n, dim);
  in.read(ds.features.data(), n * dim * sizeof(float), "feature matrix");
  for (float f : ds.features.values()) {
    if (!std::isfinite(f)) throw FormatError("non-finite feature value");
  }
  ds.labels.resize(n);
  in.read(ds.labels.data(), n * sizeof(std::uint32_t), "labels");
  for (auto* mask : {&ds.train_mask, &ds.val_mask, &ds.test_mask}) {
    mask->resize(n);
    in.read(mask->data(), n, "masks");
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after masks");
  ds.validate();
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("file not found: " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  return parse_dataset(std::as_bytes(std::span(raw)));
}

std::vector<std::byte> serialize_dataset(const Dataset& ds) {
  ds.validate();
  std::vector<Edge> edges;
  for (std::size_t v = 0; v < ds.num_nodes(); ++v) {
    for (NodeId u : ds.graph.neighbors(static_cast<NodeId>(v))) {
      if (u <= v) edges.emplace_back(u, static_cast<NodeId>(v));
    }
  }
  std::vector<std::byte> out;
  out.reserve(24 + edges.size() * 8 + ds.features.size() * 4 + ds.num_nodes() * 7);
  for (char c : kDatasetMagic) out.push_back(static_cast<std::byte>(c));
  append_raw(out, kDatasetVersion);
  append_raw(out, static_cast<std::uint32_t>(ds.num_nodes()));
  append_raw(out, static_cast<std::uint32_t>(ds.feature_dim()));
  append_raw(out, static_cast<std::uint32_t>(ds.num_classes));
  append_raw(out, static_cast<std::uint32_t>(edges.size()));
  for (const auto& [src, dst] : edges) {
    append_raw(out, src);
    append_raw(out, dst);
  }
  for (float f : ds.features.values()) append_raw(out, f);
  for (auto label : ds.labels) append_raw(out, label);
  for (const auto* mask : {&ds.train_mask, &ds.val_mask, &ds.test_mask}) {
    for (auto b : *mask) out.push_back(static_cast<std::byte>(b));
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const auto bytes = serialize_dataset(ds);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw FormatError("cannot write " + path.string());
  file.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace sgq
