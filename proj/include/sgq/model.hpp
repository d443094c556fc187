#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgq/graph.hpp"
#include "sgq/matrix.hpp"
#include "sgq/quant_config.hpp"
#include "sgq/quantizer.hpp"
#include "sgq/tape.hpp"

namespace sgq {

enum class Arch : std::uint32_t { kGcn = 0, kGatLite = 1, kAgnnLite = 2 };

std::string_view to_string(Arch arch);
/// Accepts "gcn", "gat", "agnn".
Arch parse_arch(std::string_view text);

struct ArchShape {
  std::size_t hidden;
  std::size_t depth;
};
/// Hidden width and layer count used for each architecture by default.
ArchShape default_shape(Arch arch);

constexpr double kGatSlope = 0.2;

/// w_att is 2*D_k x 1 for GAT-lite (source half on top), 1 x 1 (beta) for
/// AGNN-lite and empty for GCN.
template <typename T>
struct BasicLayerWeights {
  Matrix<T> w_com;
  Matrix<T> w_att;

  bool operator==(const BasicLayerWeights&) const = default;
};

template <typename T>
struct BasicGnnModel {
  Arch arch = Arch::kGcn;
  std::vector<BasicLayerWeights<T>> layers;
  bool self_loops = true;
  bool raw_ones = false;  // GCN only: all-ones attention instead of 1/sqrt(d_u d_v)

  std::size_t depth() const { return layers.size(); }
  /// D_0 .. D_depth.
  std::vector<std::size_t> dims() const;
  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().w_com.rows(); }
  std::size_t num_classes() const { return layers.empty() ? 0 : layers.back().w_com.cols(); }
  std::size_t num_weights() const;

  /// Throws std::invalid_argument when shapes do not chain or do not fit the arch.
  void validate() const;

  template <typename U>
  BasicGnnModel<U> cast() const {
    BasicGnnModel<U> out;
    out.arch = arch;
    out.self_loops = self_loops;
    out.raw_ones = raw_ones;
    for (const auto& l : layers) out.layers.push_back({l.w_com.template cast<U>(), l.w_att.template cast<U>()});
    return out;
  }

  bool operator==(const BasicGnnModel&) const = default;
};

using LayerWeights = BasicLayerWeights<float>;
using GnnModel = BasicGnnModel<float>;

struct ModelOptions {
  bool self_loops = true;
  bool raw_ones = false;
};

/// Glorot-uniform weights; AGNN beta starts at 1.
GnnModel init_model(Arch arch, std::span<const std::size_t> dims, std::uint64_t seed, ModelOptions options = {});
GnnModel init_model(Arch arch, std::size_t input_dim, std::size_t num_classes, std::uint64_t seed,
                    ModelOptions options = {});

/// Graph-derived quantities shared by every forward pass on one graph.
struct GraphContext {
  CsrGraph propagation;                // raw graph plus self-loops when enabled
  std::vector<NodeId> edge_dst;        // row (destination) of each propagation edge
  std::vector<std::uint32_t> degrees;  // raw degrees, used for degree buckets
  std::vector<double> gcn_norm;        // 1/sqrt(d_u d_v) on the propagation graph
};

GraphContext make_context(const CsrGraph& graph, bool self_loops);

namespace ad {

/// out[v] = sum over edges e=(u->v) of alpha[e] * h[u]. alpha is E x 1.
template <typename T>
Var gather_weighted_sum(Tape<T>& tape, Var h, Var alpha, const CsrGraph& graph, std::span<const NodeId> edge_dst);

/// e[e] = s_src[u] + s_dst[v] for e=(u->v). Inputs are N x 1.
template <typename T>
Var edge_pair_sum(Tape<T>& tape, Var s_src, Var s_dst, const CsrGraph& graph, std::span<const NodeId> edge_dst);

/// Softmax of per-edge scores over each destination's incoming edges.
template <typename T>
Var edge_softmax(Tape<T>& tape, Var scores, const CsrGraph& graph);

/// cos(h_u, h_v) per edge with norms sqrt(|h|^2 + 1e-12).
template <typename T>
Var edge_cosine(Tape<T>& tape, Var h, const CsrGraph& graph, std::span<const NodeId> edge_dst);

}  // namespace ad

/// Per-layer full-precision statistics from one forward pass, used to set
/// quantization ranges.
struct CalibrationStats {
  std::vector<std::vector<float>> row_min;  // [layer][node] of the layer input
  std::vector<std::vector<float>> row_max;
  std::vector<double> att_min;  // [layer]; unused for GCN
  std::vector<double> att_max;
};

/// Frozen quantization parameters of one config on one model and graph.
struct QuantPlan {
  struct Layer {
    std::vector<int> row_group;        // per node; -1 keeps the row in full precision
    std::vector<QuantParams> groups;
    std::optional<QuantParams> attention;  // absent: attention left in full precision
  };
  std::vector<Layer> layers;
};

/// Throws std::invalid_argument when a layer-aware config depth differs from the model's.
QuantPlan make_plan(const QuantConfig& cfg, const CalibrationStats& stats, const GraphContext& ctx, Arch arch,
                    std::size_t depth);

template <typename T>
struct ModelVars {
  std::vector<ad::Var> w_com;
  std::vector<std::optional<ad::Var>> w_att;
};

template <typename T>
ModelVars<T> bind_parameters(ad::Tape<T>& tape, const BasicGnnModel<T>& model, bool requires_grad);

/// Attention of one layer from (already quantized) embeddings h.
template <typename T>
ad::Var attention_forward(ad::Tape<T>& tape, const BasicGnnModel<T>& model, std::size_t layer, const ModelVars<T>& vars,
                          ad::Var h, const GraphContext& ctx);

/// Aggregates with attention and applies w_com. Transform happens before the
/// aggregation, which is the same linear map.
template <typename T>
ad::Var combine_forward(ad::Tape<T>& tape, ad::Var h, ad::Var alpha, ad::Var w_com, const GraphContext& ctx);

template <typename T>
struct ForwardTrace {
  std::vector<ad::Var> layer_inputs;  // full precision, before quantization
  std::vector<ad::Var> attention;     // after any quantization
  ad::Var log_probs;
};

/// Full forward pass. A null plan runs full precision.
template <typename T>
ForwardTrace<T> forward(ad::Tape<T>& tape, const BasicGnnModel<T>& model, const ModelVars<T>& vars, ad::Var features,
                        const GraphContext& ctx, const QuantPlan* plan);

/// Tape-free convenience: log-probabilities with nothing requiring grad.
template <typename T>
Matrix<T> predict(const BasicGnnModel<T>& model, const Matrix<T>& features, const GraphContext& ctx,
                  const QuantPlan* plan);

CalibrationStats calibrate_model(const GnnModel& model, const Matrix<float>& features, const GraphContext& ctx);

FeatureLayout layout_of(const GnnModel& model, const GraphContext& ctx);

/// SGQM checkpoint I/O. Throws FormatError on malformed input.
std::vector<std::byte> serialize_model(const GnnModel& model);
GnnModel parse_model(std::span<const std::byte> bytes);
void save_model(const GnnModel& model, const std::filesystem::path& path);
GnnModel load_model(const std::filesystem::path& path);

}  // namespace sgq
