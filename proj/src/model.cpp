#include "sgq/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "byte_io.hpp"
#include "sgq/random.hpp"

namespace sgq {

std::string_view to_string(Arch arch) {
  switch (arch) {
    case Arch::kGcn: return "gcn";
    case Arch::kGatLite: return "gat";
    case Arch::kAgnnLite: return "agnn";
  }
  return "?";
}

Arch parse_arch(std::string_view text) {
  for (auto a : {Arch::kGcn, Arch::kGatLite, Arch::kAgnnLite}) {
    if (to_string(a) == text) return a;
  }
  throw std::invalid_argument("unknown arch '" + std::string(text) + "' (expected gcn, gat or agnn)");
}

ArchShape default_shape(Arch arch) {
  switch (arch) {
    case Arch::kGcn: return {32, 2};
    case Arch::kGatLite: return {256, 2};
    case Arch::kAgnnLite: return {16, 4};
  }
  return {32, 2};
}

template <typename T>
std::vector<std::size_t> BasicGnnModel<T>::dims() const {
  std::vector<std::size_t> out;
  if (layers.empty()) return out;
  for (const auto& l : layers) out.push_back(l.w_com.rows());
  out.push_back(layers.back().w_com.cols());
  return out;
}

template <typename T>
std::size_t BasicGnnModel<T>::num_weights() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w_com.size() + l.w_att.size();
  return n;
}

template <typename T>
void BasicGnnModel<T>::validate() const {
  if (layers.empty()) throw std::invalid_argument("GnnModel: depth must be >= 1");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.w_com.empty()) throw std::invalid_argument("GnnModel: empty w_com at layer " + std::to_string(k));
    if (k > 0 && layers[k - 1].w_com.cols() != l.w_com.rows()) {
      throw std::invalid_argument("GnnModel: layer " + std::to_string(k) + " input " + std::to_string(l.w_com.rows()) +
                                  " does not match previous output " + std::to_string(layers[k - 1].w_com.cols()));
    }
    const std::size_t d = l.w_com.rows();
    bool ok = true;
    switch (arch) {
      case Arch::kGcn: ok = l.w_att.empty(); break;
      case Arch::kGatLite: ok = l.w_att.rows() == 2 * d && l.w_att.cols() == 1; break;
      case Arch::kAgnnLite: ok = l.w_att.rows() == 1 && l.w_att.cols() == 1; break;
    }
    if (!ok) {
      throw std::invalid_argument("GnnModel: w_att of layer " + std::to_string(k) + " has shape " +
                                  shape_string(l.w_att) + " for arch " + std::string(to_string(arch)));
    }
  }
}

template struct BasicGnnModel<float>;
template struct BasicGnnModel<double>;

namespace {

Matrix<float> glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix<float> m(rows, cols);
  for (auto& v : m.values()) v = static_cast<float>(uniform(rng, -limit, limit));
  return m;
}

}  // namespace

GnnModel init_model(Arch arch, std::span<const std::size_t> dims, std::uint64_t seed, ModelOptions options) {
  if (dims.size() < 2) throw std::invalid_argument("init_model: need at least input and output dims");
  Rng rng(seed);
  GnnModel model;
  model.arch = arch;
  model.self_loops = options.self_loops;
  model.raw_ones = options.raw_ones;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    LayerWeights l;
    l.w_com = glorot(dims[k], dims[k + 1], rng);
    if (arch == Arch::kGatLite) l.w_att = glorot(2 * dims[k], 1, rng);
    if (arch == Arch::kAgnnLite) l.w_att = Matrix<float>(1, 1, 1.0f);
    model.layers.push_back(std::move(l));
  }
  model.validate();
  return model;
}

GnnModel init_model(Arch arch, std::size_t input_dim, std::size_t num_classes, std::uint64_t seed, ModelOptions options) {
  const auto shape = default_shape(arch);
  std::vector<std::size_t> dims{input_dim};
  for (std::size_t k = 1; k < shape.depth; ++k) dims.push_back(shape.hidden);
  dims.push_back(num_classes);
  return init_model(arch, dims, seed, options);
}

GraphContext make_context(const CsrGraph& graph, bool self_loops) {
  GraphContext ctx;
  ctx.propagation = self_loops ? add_self_loops(graph) : graph;
  ctx.edge_dst = ctx.propagation.edge_rows();
  ctx.degrees = degrees(graph);
  const auto prop_deg = degrees(ctx.propagation);
  const auto& col = ctx.propagation.col_idx();
  ctx.gcn_norm.resize(col.size());
  for (std::size_t e = 0; e < col.size(); ++e) {
    ctx.gcn_norm[e] = 1.0 / std::sqrt(static_cast<double>(prop_deg[col[e]]) * static_cast<double>(prop_deg[ctx.edge_dst[e]]));
  }
  return ctx;
}

namespace ad {

namespace {

void check_edges(const char* op, const CsrGraph& g, std::span<const NodeId> edge_dst) {
  if (edge_dst.size() != g.num_edges()) {
    throw std::invalid_argument(std::string(op) + ": edge_dst length does not match graph");
  }
}

template <typename T>
void check_edge_vector(const char* op, const Matrix<T>& m, const CsrGraph& g) {
  if (m.rows() != g.num_edges() || m.cols() != 1) {
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(g.num_edges()) + "x1 edge values, got " +
                                shape_string(m));
  }
}

template <typename T>
void check_node_rows(const char* op, const Matrix<T>& m, const CsrGraph& g) {
  if (m.rows() != g.num_nodes()) {
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(g.num_nodes()) + " rows, got " +
                                shape_string(m));
  }
}

}  // namespace

template <typename T>
Var gather_weighted_sum(Tape<T>& tape, Var h, Var alpha, const CsrGraph& graph, std::span<const NodeId> edge_dst) {
  const auto& H = tape.value(h);
  const auto& A = tape.value(alpha);
  check_node_rows("gather_weighted_sum", H, graph);
  check_edge_vector("gather_weighted_sum", A, graph);
  check_edges("gather_weighted_sum", graph, edge_dst);
  const std::size_t d = H.cols();
  const auto& col = graph.col_idx();
  Matrix<T> out(graph.num_nodes(), d);
  for (std::size_t e = 0; e < col.size(); ++e) {
    const T a = A.values()[e];
    if (a == T{0}) continue;
    const T* src = H.data() + static_cast<std::size_t>(col[e]) * d;
    T* dst = out.data() + static_cast<std::size_t>(edge_dst[e]) * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += a * src[j];
  }
  const CsrGraph* g = &graph;
  return tape.record(OpKind::kGatherWeightedSum, {h, alpha}, std::move(out),
                     [h, alpha, g, edge_dst](Tape<T>& t, std::size_t self) {
                       const auto& G = t.upstream(self);
                       const auto& H = t.value(h);
                       const auto& A = t.value(alpha);
                       const std::size_t d = H.cols();
                       const auto& col = g->col_idx();
                       const bool need_h = t.requires_grad(h), need_a = t.requires_grad(alpha);
                       Matrix<T>* dH = need_h ? &t.grad_slot(h.id) : nullptr;
                       Matrix<T>* dA = need_a ? &t.grad_slot(alpha.id) : nullptr;
                       for (std::size_t e = 0; e < col.size(); ++e) {
                         const T* gv = G.data() + static_cast<std::size_t>(edge_dst[e]) * d;
                         const std::size_t u = col[e];
                         if (need_h) {
                           const T a = A.values()[e];
                           T* du = dH->data() + u * d;
                           for (std::size_t j = 0; j < d; ++j) du[j] += a * gv[j];
                         }
                         if (need_a) {
                           const T* hu = H.data() + u * d;
                           T acc{0};
                           for (std::size_t j = 0; j < d; ++j) acc += gv[j] * hu[j];
                           dA->values()[e] += acc;
                         }
                       }
                     });
}

template <typename T>
Var edge_pair_sum(Tape<T>& tape, Var s_src, Var s_dst, const CsrGraph& graph, std::span<const NodeId> edge_dst) {
  const auto& S = tape.value(s_src);
  const auto& D = tape.value(s_dst);
  check_node_rows("edge_pair_sum", S, graph);
  check_node_rows("edge_pair_sum", D, graph);
  if (S.cols() != 1 || D.cols() != 1) throw std::invalid_argument("edge_pair_sum: node scores must be N x 1");
  check_edges("edge_pair_sum", graph, edge_dst);
  const auto& col = graph.col_idx();
  Matrix<T> out(col.size(), 1);
  for (std::size_t e = 0; e < col.size(); ++e) out.values()[e] = S.values()[col[e]] + D.values()[edge_dst[e]];
  const CsrGraph* g = &graph;
  return tape.record(OpKind::kEdgePairSum, {s_src, s_dst}, std::move(out),
                     [s_src, s_dst, g, edge_dst](Tape<T>& t, std::size_t self) {
                       const auto& G = t.upstream(self).values();
                       const auto& col = g->col_idx();
                       if (t.requires_grad(s_src)) {
                         auto& d = t.grad_slot(s_src.id).values();
                         for (std::size_t e = 0; e < col.size(); ++e) d[col[e]] += G[e];
                       }
                       if (t.requires_grad(s_dst)) {
                         auto& d = t.grad_slot(s_dst.id).values();
                         for (std::size_t e = 0; e < col.size(); ++e) d[edge_dst[e]] += G[e];
                       }
                     });
}

template <typename T>
Var edge_softmax(Tape<T>& tape, Var scores, const CsrGraph& graph) {
  const auto& S = tape.value(scores);
  check_edge_vector("edge_softmax", S, graph);
  const auto& rp = graph.row_ptr();
  Matrix<T> out(S.rows(), 1);
  for (std::size_t v = 0; v < graph.num_nodes(); ++v) {
    if (rp[v] == rp[v + 1]) continue;
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t e = rp[v]; e < rp[v + 1]; ++e) peak = std::max(peak, S.values()[e]);
    T total{0};
    for (std::size_t e = rp[v]; e < rp[v + 1]; ++e) {
      out.values()[e] = std::exp(S.values()[e] - peak);
      total += out.values()[e];
    }
    for (std::size_t e = rp[v]; e < rp[v + 1]; ++e) out.values()[e] /= total;
  }
  const CsrGraph* g = &graph;
  return tape.record(OpKind::kEdgeSoftmax, {scores}, std::move(out), [scores, g](Tape<T>& t, std::size_t self) {
    const auto& G = t.upstream(self).values();
    const auto& Y = t.node(self).value.values();
    auto& d = t.grad_slot(scores.id).values();
    const auto& rp = g->row_ptr();
    for (std::size_t v = 0; v < g->num_nodes(); ++v) {
      T dot{0};
      for (std::size_t e = rp[v]; e < rp[v + 1]; ++e) dot += Y[e] * G[e];
      for (std::size_t e = rp[v]; e < rp[v + 1]; ++e) d[e] += Y[e] * (G[e] - dot);
    }
  });
}

template <typename T>
Var edge_cosine(Tape<T>& tape, Var h, const CsrGraph& graph, std::span<const NodeId> edge_dst) {
  const auto& H = tape.value(h);
  check_node_rows("edge_cosine", H, graph);
  check_edges("edge_cosine", graph, edge_dst);
  const std::size_t n = H.rows(), d = H.cols();
  std::vector<T> norm(n);
  for (std::size_t v = 0; v < n; ++v) {
    T sq{0};
    for (T x : H.row(v)) sq += x * x;
    norm[v] = std::sqrt(sq + T(1e-12));
  }
  const auto& col = graph.col_idx();
  Matrix<T> out(col.size(), 1);
  for (std::size_t e = 0; e < col.size(); ++e) {
    const T* hu = H.data() + static_cast<std::size_t>(col[e]) * d;
    const T* hv = H.data() + static_cast<std::size_t>(edge_dst[e]) * d;
    T dot{0};
    for (std::size_t j = 0; j < d; ++j) dot += hu[j] * hv[j];
    out.values()[e] = dot / (norm[col[e]] * norm[edge_dst[e]]);
  }
  const CsrGraph* g = &graph;
  return tape.record(OpKind::kEdgeCosine, {h}, std::move(out),
                     [h, g, edge_dst, norm = std::move(norm)](Tape<T>& t, std::size_t self) {
                       const auto& G = t.upstream(self).values();
                       const auto& C = t.node(self).value.values();
                       const auto& H = t.value(h);
                       auto& dH = t.grad_slot(h.id);
                       const std::size_t d = H.cols();
                       const auto& col = g->col_idx();
                       for (std::size_t e = 0; e < col.size(); ++e) {
                         if (G[e] == T{0}) continue;
                         const std::size_t u = col[e], v = edge_dst[e];
                         const T inv = T{1} / (norm[u] * norm[v]);
                         const T cu = C[e] / (norm[u] * norm[u]);
                         const T cv = C[e] / (norm[v] * norm[v]);
                         const T* hu = H.data() + u * d;
                         const T* hv = H.data() + v * d;
                         T* du = dH.data() + u * d;
                         T* dv = dH.data() + v * d;
                         for (std::size_t j = 0; j < d; ++j) {
                           du[j] += G[e] * (hv[j] * inv - cu * hu[j]);
                           dv[j] += G[e] * (hu[j] * inv - cv * hv[j]);
                         }
                       }
                     });
}

#define SGQ_INSTANTIATE_GNN_OPS(T)                                                                        \
  template Var gather_weighted_sum<T>(Tape<T>&, Var, Var, const CsrGraph&, std::span<const NodeId>);     \
  template Var edge_pair_sum<T>(Tape<T>&, Var, Var, const CsrGraph&, std::span<const NodeId>);           \
  template Var edge_softmax<T>(Tape<T>&, Var, const CsrGraph&);                                          \
  template Var edge_cosine<T>(Tape<T>&, Var, const CsrGraph&, std::span<const NodeId>);

SGQ_INSTANTIATE_GNN_OPS(float)
SGQ_INSTANTIATE_GNN_OPS(double)

}  // namespace ad

namespace {

QuantParams range_params(int bits, double lo, double hi) {
  if (!(hi > lo)) hi = lo + 1e-6;
  return QuantParams::make(bits, lo, hi);
}

}  // namespace

QuantPlan make_plan(const QuantConfig& cfg, const CalibrationStats& stats, const GraphContext& ctx, Arch arch,
                    std::size_t depth) {
  if (layer_aware(cfg.granularity()) && cfg.depth() != depth) {
    throw std::invalid_argument("config depth " + std::to_string(cfg.depth()) + " != model depth " +
                                std::to_string(depth));
  }
  if (stats.row_min.size() != depth) throw std::invalid_argument("make_plan: calibration depth mismatch");
  const std::size_t n = ctx.degrees.size();
  QuantPlan plan;
  for (std::size_t k = 0; k < depth; ++k) {
    QuantPlan::Layer layer;
    layer.row_group.assign(n, -1);
    const std::size_t num_groups = cfg.buckets() ? kNumBuckets : 1;
    std::vector<double> lo(num_groups, std::numeric_limits<double>::infinity());
    std::vector<double> hi(num_groups, -std::numeric_limits<double>::infinity());
    std::vector<int> bits(num_groups, kFullPrecisionBits);
    for (std::size_t v = 0; v < n; ++v) {
      const std::size_t group = cfg.buckets() ? cfg.buckets()->bucket_of(ctx.degrees[v]) : 0;
      const int b = cfg.bits_for(k, Component::kCombination, ctx.degrees[v]);
      bits[group] = b;
      if (b == kFullPrecisionBits) continue;
      layer.row_group[v] = static_cast<int>(group);
      lo[group] = std::min<double>(lo[group], stats.row_min[k][v]);
      hi[group] = std::max<double>(hi[group], stats.row_max[k][v]);
    }
    for (std::size_t j = 0; j < num_groups; ++j) {
      if (bits[j] == kFullPrecisionBits || !std::isfinite(lo[j])) {
        layer.groups.push_back(QuantParams{});  // unused
      } else {
        layer.groups.push_back(range_params(bits[j], lo[j], hi[j]));
      }
    }
    if (arch != Arch::kGcn) {
      const int b = cfg.bits_for(k, Component::kAttention, 0);
      if (b != kFullPrecisionBits) layer.attention = range_params(b, stats.att_min[k], stats.att_max[k]);
    }
    plan.layers.push_back(std::move(layer));
  }
  return plan;
}

template <typename T>
ModelVars<T> bind_parameters(ad::Tape<T>& tape, const BasicGnnModel<T>& model, bool requires_grad) {
  ModelVars<T> vars;
  for (const auto& l : model.layers) {
    vars.w_com.push_back(tape.leaf(l.w_com, requires_grad));
    if (l.w_att.empty()) {
      vars.w_att.push_back(std::nullopt);
    } else {
      vars.w_att.push_back(tape.leaf(l.w_att, requires_grad));
    }
  }
  return vars;
}

template <typename T>
ad::Var attention_forward(ad::Tape<T>& tape, const BasicGnnModel<T>& model, std::size_t layer, const ModelVars<T>& vars,
                          ad::Var h, const GraphContext& ctx) {
  const auto& H = tape.value(h);
  if (H.rows() != ctx.propagation.num_nodes()) {
    throw std::invalid_argument("attention_forward: embedding rows " + std::to_string(H.rows()) + " != node count " +
                                std::to_string(ctx.propagation.num_nodes()));
  }
  if (H.cols() != model.layers.at(layer).w_com.rows()) {
    throw std::invalid_argument("attention_forward: embedding width " + std::to_string(H.cols()) + " != layer input " +
                                std::to_string(model.layers[layer].w_com.rows()));
  }
  const auto& graph = ctx.propagation;
  switch (model.arch) {
    case Arch::kGcn: {
      Matrix<T> alpha(graph.num_edges(), 1);
      for (std::size_t e = 0; e < graph.num_edges(); ++e) {
        alpha.values()[e] = model.raw_ones ? T{1} : static_cast<T>(ctx.gcn_norm[e]);
      }
      return tape.constant(std::move(alpha));
    }
    case Arch::kGatLite: {
      const ad::Var a = *vars.w_att.at(layer);
      const std::size_t d = H.cols();
      const ad::Var s_src = ad::matmul(tape, h, ad::slice_rows(tape, a, 0, d));
      const ad::Var s_dst = ad::matmul(tape, h, ad::slice_rows(tape, a, d, d));
      const ad::Var e = ad::edge_pair_sum(tape, s_src, s_dst, graph, ctx.edge_dst);
      return ad::edge_softmax(tape, ad::leaky_relu(tape, e, static_cast<T>(kGatSlope)), graph);
    }
    case Arch::kAgnnLite: {
      const ad::Var beta = *vars.w_att.at(layer);
      const ad::Var cos = ad::edge_cosine(tape, h, graph, ctx.edge_dst);
      return ad::edge_softmax(tape, ad::scale_by(tape, beta, cos), graph);
    }
  }
  throw std::logic_error("attention_forward: unknown arch");
}

template <typename T>
ad::Var combine_forward(ad::Tape<T>& tape, ad::Var h, ad::Var alpha, ad::Var w_com, const GraphContext& ctx) {
  const ad::Var z = ad::matmul(tape, h, w_com);
  return ad::gather_weighted_sum(tape, z, alpha, ctx.propagation, ctx.edge_dst);
}

template <typename T>
ForwardTrace<T> forward(ad::Tape<T>& tape, const BasicGnnModel<T>& model, const ModelVars<T>& vars, ad::Var features,
                        const GraphContext& ctx, const QuantPlan* plan) {
  const auto& X = tape.value(features);
  if (X.cols() != model.input_dim()) {
    throw std::invalid_argument("forward: feature width " + std::to_string(X.cols()) + " != model input " +
                                std::to_string(model.input_dim()));
  }
  if (plan && plan->layers.size() != model.depth()) {
    throw std::invalid_argument("forward: plan depth " + std::to_string(plan->layers.size()) + " != model depth " +
                                std::to_string(model.depth()));
  }
  ForwardTrace<T> trace;
  ad::Var h = features;
  for (std::size_t k = 0; k < model.depth(); ++k) {
    trace.layer_inputs.push_back(h);
    ad::Var hq = h;
    const QuantPlan::Layer* lp = plan ? &plan->layers[k] : nullptr;
    if (lp && std::any_of(lp->row_group.begin(), lp->row_group.end(), [](int g) { return g >= 0; })) {
      hq = ad::fake_quantize_rows(tape, h, std::span<const int>(lp->row_group), std::span<const QuantParams>(lp->groups));
    }
    ad::Var alpha = attention_forward(tape, model, k, vars, hq, ctx);
    if (lp && lp->attention) alpha = ad::fake_quantize(tape, alpha, *lp->attention);
    trace.attention.push_back(alpha);
    const ad::Var out = combine_forward(tape, hq, alpha, vars.w_com[k], ctx);
    h = k + 1 == model.depth() ? ad::log_softmax_rows(tape, out) : ad::relu(tape, out);
  }
  trace.log_probs = h;
  return trace;
}

template <typename T>
Matrix<T> predict(const BasicGnnModel<T>& model, const Matrix<T>& features, const GraphContext& ctx,
                  const QuantPlan* plan) {
  ad::Tape<T> tape;
  const auto vars = bind_parameters(tape, model, false);
  const auto trace = forward(tape, model, vars, tape.constant(features), ctx, plan);
  return tape.value(trace.log_probs);
}

#define SGQ_INSTANTIATE_MODEL(T)                                                                                      \
  template ModelVars<T> bind_parameters<T>(ad::Tape<T>&, const BasicGnnModel<T>&, bool);                              \
  template ad::Var attention_forward<T>(ad::Tape<T>&, const BasicGnnModel<T>&, std::size_t, const ModelVars<T>&,      \
                                        ad::Var, const GraphContext&);                                                \
  template ad::Var combine_forward<T>(ad::Tape<T>&, ad::Var, ad::Var, ad::Var, const GraphContext&);                  \
  template ForwardTrace<T> forward<T>(ad::Tape<T>&, const BasicGnnModel<T>&, const ModelVars<T>&, ad::Var,            \
                                      const GraphContext&, const QuantPlan*);                                         \
  template Matrix<T> predict<T>(const BasicGnnModel<T>&, const Matrix<T>&, const GraphContext&, const QuantPlan*);

SGQ_INSTANTIATE_MODEL(float)
SGQ_INSTANTIATE_MODEL(double)

CalibrationStats calibrate_model(const GnnModel& model, const Matrix<float>& features, const GraphContext& ctx) {
  ad::Tape<float> tape;
  const auto vars = bind_parameters(tape, model, false);
  const auto trace = forward(tape, model, vars, tape.constant(features), ctx, nullptr);
  CalibrationStats stats;
  for (std::size_t k = 0; k < model.depth(); ++k) {
    const auto& H = tape.value(trace.layer_inputs[k]);
    std::vector<float> lo(H.rows()), hi(H.rows());
    for (std::size_t v = 0; v < H.rows(); ++v) {
      const auto row = H.row(v);
      const auto [mn, mx] = std::minmax_element(row.begin(), row.end());
      lo[v] = row.empty() ? 0.0f : *mn;
      hi[v] = row.empty() ? 0.0f : *mx;
    }
    stats.row_min.push_back(std::move(lo));
    stats.row_max.push_back(std::move(hi));
    const auto& A = tape.value(trace.attention[k]).values();
    if (A.empty()) {
      stats.att_min.push_back(0.0);
      stats.att_max.push_back(1.0);
    } else {
      const auto [mn, mx] = std::minmax_element(A.begin(), A.end());
      stats.att_min.push_back(*mn);
      stats.att_max.push_back(*mx);
    }
  }
  return stats;
}

FeatureLayout layout_of(const GnnModel& model, const GraphContext& ctx) {
  FeatureLayout layout;
  const auto dims = model.dims();
  if (!dims.empty()) layout.embedding_dims.assign(dims.begin(), dims.end() - 1);
  layout.degrees = ctx.degrees;
  layout.stores_attention = model.arch != Arch::kGcn;
  layout.attention_edges = ctx.propagation.num_edges();
  return layout;
}

namespace {

constexpr char kModelMagic[4] = {'S', 'G', 'Q', 'M'};
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint32_t kFlagSelfLoops = 1;
constexpr std::uint32_t kFlagRawOnes = 2;

void append_matrix(std::vector<std::byte>& out, const Matrix<float>& m) {
  detail::append_raw(out, static_cast<std::uint32_t>(m.rows()));
  detail::append_raw(out, static_cast<std::uint32_t>(m.cols()));
  for (float v : m.values()) detail::append_raw(out, v);
}

Matrix<float> read_matrix(detail::ByteReader& in) {
  const std::size_t rows = in.u32("weight header");
  const std::size_t cols = in.u32("weight header");
  in.require(rows * cols * sizeof(float), "weight values");
  Matrix<float> m(rows, cols);
  in.read(m.data(), rows * cols * sizeof(float), "weight values");
  for (float v : m.values()) {
    if (!std::isfinite(v)) throw FormatError("non-finite weight value");
  }
  return m;
}

}  // namespace

std::vector<std::byte> serialize_model(const GnnModel& model) {
  model.validate();
  std::vector<std::byte> out;
  for (char c : kModelMagic) out.push_back(static_cast<std::byte>(c));
  detail::append_raw(out, kModelVersion);
  detail::append_raw(out, static_cast<std::uint32_t>(model.arch));
  detail::append_raw(out, static_cast<std::uint32_t>(model.depth()));
  for (auto d : model.dims()) detail::append_raw(out, static_cast<std::uint32_t>(d));
  const std::uint32_t flags = (model.self_loops ? kFlagSelfLoops : 0) | (model.raw_ones ? kFlagRawOnes : 0);
  detail::append_raw(out, flags);
  for (const auto& l : model.layers) {
    append_matrix(out, l.w_com);
    append_matrix(out, l.w_att);
  }
  return out;
}

GnnModel parse_model(std::span<const std::byte> bytes) {
  detail::ByteReader in(bytes);
  char magic[4];
  in.read(magic, 4, "header");
  if (std::memcmp(magic, kModelMagic, 4) != 0) throw FormatError("bad magic");
  const auto version = in.u32("header");
  if (version != kModelVersion) throw FormatError("unsupported version " + std::to_string(version));
  const auto arch = in.u32("header");
  if (arch > static_cast<std::uint32_t>(Arch::kAgnnLite)) throw FormatError("unknown arch tag " + std::to_string(arch));
  const std::size_t depth = in.u32("header");
  if (depth == 0 || depth > 64) throw FormatError("implausible depth " + std::to_string(depth));
  std::vector<std::size_t> dims(depth + 1);
  for (auto& d : dims) d = in.u32("header");
  const auto flags = in.u32("header");
  GnnModel model;
  model.arch = static_cast<Arch>(arch);
  model.self_loops = (flags & kFlagSelfLoops) != 0;
  model.raw_ones = (flags & kFlagRawOnes) != 0;
  for (std::size_t k = 0; k < depth; ++k) {
    LayerWeights l;
    l.w_com = read_matrix(in);
    l.w_att = read_matrix(in);
    if (l.w_com.rows() != dims[k] || l.w_com.cols() != dims[k + 1]) {
      throw FormatError("layer " + std::to_string(k) + " weights do not match header dims");
    }
    model.layers.push_back(std::move(l));
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after weights");
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return model;
}

void save_model(const GnnModel& model, const std::filesystem::path& path) {
  detail::write_file(path, serialize_model(model));
}

GnnModel load_model(const std::filesystem::path& path) { return parse_model(detail::read_file(path)); }

}  // namespace sgq
