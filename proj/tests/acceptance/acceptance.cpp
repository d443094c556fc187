// Prints one PASS/FAIL line per acceptance criterion and exits nonzero if any fail.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sgq/memory.hpp"
#include "sgq/quantizer.hpp"
#include "sgq/report.hpp"
#include "sgq/search.hpp"
#include "sgq/synthetic.hpp"
#include "sgq/trainer.hpp"
#include "test_util.hpp"

namespace sgq {
namespace {

namespace fs = std::filesystem;
using testing::max_gradient_error;
using testing::random_matrix;
using testing::scalarize;

struct Verdict {
  bool pass;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* pattern, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Loads the dataset named by `env` when set, otherwise the seeded stand-in.
Dataset load_named(const char* env, const CitationLikeSpec& fallback) {
  if (const char* path = std::getenv(env); path && *path) {
    std::printf("data: %s from %s\n", fallback.name.c_str(), path);
    return load_dataset(path);
  }
  std::printf("data: %s is the seeded synthetic stand-in (set %s to an SGQD file to use the real graph)\n",
              fallback.name.c_str(), env);
  return make_citation_like(fallback);
}

const Dataset& cora() {
  static const Dataset ds = load_named("SGQ_CORA", cora_like());
  return ds;
}

const Dataset& citeseer() {
  static const Dataset ds = load_named("SGQ_CITESEER", citeseer_like());
  return ds;
}

Verdict p1_round_trip() {
  const Stopwatch clock;
  Rng rng(101);
  const std::array<int, 5> bit_choices{1, 2, 4, 8, 16};
  std::size_t inside = 0, outside = 0, violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const int bits = bit_choices[uniform_index(rng, bit_choices.size())];
    const double lo = uniform(rng, -10.0, 10.0);
    const auto p = QuantParams::make(bits, lo, lo + uniform(rng, 1e-3, 20.0));
    const double x = uniform(rng, p.alpha_min - 5.0, p.alpha_max + 5.0);
    const auto level = quantize(x, p);
    if (x >= p.alpha_min && x <= p.alpha_max) {
      ++inside;
      // One level of slack for floor rounding on a level boundary.
      violations += std::abs(dequantize(level, p) - x) > p.scale * (1 + 1e-9);
    } else {
      ++outside;
      violations += level != (x < p.alpha_min ? 0u : p.max_level());
    }
  }
  const double t = clock.seconds();
  return {violations == 0 && t < 1.0,
          fmt("quantizer round trip: %.0f in range, %.0f saturated, %.0f violations, %.3f s", double(inside),
              double(outside), double(violations), t)};
}

Verdict p2_ste_identity() {
  Rng rng(202);
  std::size_t mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t rows = 1 + uniform_index(rng, 6), cols = 1 + uniform_index(rng, 6);
    const auto x = random_matrix(rows, cols, rng, -3.0, 3.0);
    const auto upstream = random_matrix(rows, cols, rng, -5.0, 5.0);
    const int bits = 1 + static_cast<int>(uniform_index(rng, 16));
    const auto p = QuantParams::make(bits, uniform(rng, -2.0, 0.0), uniform(rng, 0.1, 2.0));
    ad::Tape<double> tape;
    const auto leaf = tape.parameter(x);
    const auto y = ad::fake_quantize(tape, leaf, p);
    // Seed the output gradient directly and run only this node's backward.
    tape.grad_slot(y.id) = upstream;
    tape.node(y.id).backward(tape, y.id);
    mismatches += !(tape.grad(leaf) == upstream);
  }
  return {mismatches == 0, fmt("STE identity: %.0f of 1000 cases differ from the upstream gradient", double(mismatches))};
}

CsrGraph random_graph(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < m; ++i) {
    edges.emplace_back(static_cast<NodeId>(uniform_index(rng, n)), static_cast<NodeId>(uniform_index(rng, n)));
  }
  return build_csr(edges, n, true);
}

double loss_gradient_error(Arch arch, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = 12;
  const auto ctx = make_context(random_graph(n, 2 * n, rng), true);
  const auto features = random_matrix(n, 5, rng);
  std::vector<std::uint32_t> labels(n);
  std::vector<std::uint8_t> train(n);
  for (std::size_t v = 0; v < n; ++v) {
    labels[v] = static_cast<std::uint32_t>(v % 3);
    train[v] = v % 2 == 0;
  }
  const std::vector<std::size_t> dims{5, 4, 3};
  const auto model = init_model(arch, dims, seed).cast<double>();
  std::vector<Matrix<double>> inputs;
  for (const auto& l : model.layers) {
    inputs.push_back(l.w_com);
    if (!l.w_att.empty()) inputs.push_back(l.w_att);
  }
  return max_gradient_error(inputs, [&](ad::Tape<double>& t, const std::vector<ad::Var>& leaves) {
    ModelVars<double> vars;
    std::size_t i = 0;
    for (const auto& l : model.layers) {
      vars.w_com.push_back(leaves[i++]);
      vars.w_att.push_back(l.w_att.empty() ? std::nullopt : std::optional<ad::Var>(leaves[i++]));
    }
    const auto trace = forward(t, model, vars, t.constant(features), ctx, nullptr);
    return ad::nll_loss(t, trace.log_probs, std::span<const std::uint32_t>(labels), std::span<const std::uint8_t>(train));
  });
}

Verdict p3_autodiff() {
  const Stopwatch clock;
  using Fn = testing::ScalarFn;
  Rng rng(303);
  const auto ctx = make_context(random_graph(7, 15, rng), true);
  const auto& g = ctx.propagation;
  const std::span<const NodeId> dst(ctx.edge_dst);
  const std::size_t m = g.num_edges();
  auto away_from_kink = [](Matrix<double> x) {
    for (auto& v : x.values()) {
      if (std::abs(v) < 1e-3) v = 0.5;
    }
    return x;
  };
  const std::vector<std::uint32_t> labels{0, 2, 1, 2};
  const std::vector<std::uint8_t> mask{1, 0, 1, 1};

  struct Case {
    const char* name;
    std::vector<Matrix<double>> inputs;
    Fn f;
  };
  std::vector<Case> cases;
  for (int point = 0; point < 3; ++point) {
    cases.push_back({"matmul", {random_matrix(3, 4, rng), random_matrix(4, 2, rng)},
                     [](auto& t, const auto& v) { return scalarize(t, ad::matmul(t, v[0], v[1])); }});
    cases.push_back({"add", {random_matrix(3, 2, rng), random_matrix(3, 2, rng)},
                     [](auto& t, const auto& v) { return scalarize(t, ad::add(t, v[0], v[1])); }});
    cases.push_back({"scale", {random_matrix(2, 3, rng)},
                     [](auto& t, const auto& v) { return scalarize(t, ad::scale(t, v[0], -1.7)); }});
    cases.push_back({"scale_by", {random_matrix(1, 1, rng), random_matrix(3, 2, rng)},
                     [](auto& t, const auto& v) { return scalarize(t, ad::scale_by(t, v[0], v[1])); }});
    cases.push_back({"concat/slice", {random_matrix(2, 3, rng), random_matrix(1, 3, rng)}, [](auto& t, const auto& v) {
                       return scalarize(t, ad::slice_rows(t, ad::concat_rows(t, v[0], v[1]), 1, 2));
                     }});
    cases.push_back({"leaky_relu", {away_from_kink(random_matrix(3, 3, rng))},
                     [](auto& t, const auto& v) { return scalarize(t, ad::leaky_relu(t, v[0], 0.2)); }});
    cases.push_back({"exp", {random_matrix(2, 2, rng)},
                     [](auto& t, const auto& v) { return scalarize(t, ad::exp(t, v[0])); }});
    cases.push_back({"log_softmax", {random_matrix(4, 3, rng, -3.0, 3.0)},
                     [](auto& t, const auto& v) { return scalarize(t, ad::log_softmax_rows(t, v[0])); }});
    cases.push_back({"nll", {random_matrix(4, 3, rng)}, [&](auto& t, const auto& v) {
                       return ad::nll_loss(t, ad::log_softmax_rows(t, v[0]), labels, mask);
                     }});
    cases.push_back({"gather_weighted_sum", {random_matrix(7, 3, rng), random_matrix(m, 1, rng)},
                     [&](auto& t, const auto& v) { return scalarize(t, ad::gather_weighted_sum(t, v[0], v[1], g, dst)); }});
    cases.push_back({"edge_pair_sum", {random_matrix(7, 1, rng), random_matrix(7, 1, rng)},
                     [&](auto& t, const auto& v) { return scalarize(t, ad::edge_pair_sum(t, v[0], v[1], g, dst)); }});
    cases.push_back({"edge_softmax", {random_matrix(m, 1, rng, -2.0, 2.0)},
                     [&](auto& t, const auto& v) { return scalarize(t, ad::edge_softmax(t, v[0], g)); }});
    cases.push_back({"edge_cosine", {random_matrix(7, 4, rng)},
                     [&](auto& t, const auto& v) { return scalarize(t, ad::edge_cosine(t, v[0], g, dst)); }});
  }
  double worst = 0.0;
  std::string worst_name = "none";
  for (const auto& c : cases) {
    const double err = max_gradient_error(c.inputs, c.f);
    if (err > worst) {
      worst = err;
      worst_name = c.name;
    }
  }
  double worst_loss = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (Arch arch : {Arch::kGcn, Arch::kGatLite, Arch::kAgnnLite}) {
      worst_loss = std::max(worst_loss, loss_gradient_error(arch, seed));
    }
  }
  const double t = clock.seconds();
  return {worst <= 1e-3 && worst_loss <= 1e-3 && t < 30.0,
          fmt("autodiff: worst op rel err %.2g (", worst) + worst_name +
              fmt("), worst 2-layer loss rel err %.2g, %.1f s", worst_loss, t)};
}

TrainParams default_params(std::uint64_t seed) {
  TrainParams p;
  p.seed = seed;
  return p;
}

struct CoraGcn {
  TrainResult fp;
  double seconds;
};

const CoraGcn& cora_gcn() {
  static const CoraGcn result = [] {
    const Stopwatch clock;
    auto fp = train_full_precision(Arch::kGcn, cora(), default_params(0));
    return CoraGcn{std::move(fp), clock.seconds()};
  }();
  return result;
}

Verdict p4_full_precision() {
  const auto& r = cora_gcn();
  return {r.fp.test_acc >= 0.78 && r.seconds < 300.0,
          fmt("full-precision Cora GCN: test %.3f (bar 0.78), best epoch %.0f, %.1f s", r.fp.test_acc,
              double(r.fp.best_epoch), r.seconds)};
}

Verdict p5_uniform_eight() {
  const auto& base = cora_gcn();
  const Stopwatch clock;
  const auto q = finetune_quantized(base.fp.model, cora(), QuantConfig::uniform(8), default_params(0));
  const double drop = base.fp.test_acc - q.test_acc;
  const double t = clock.seconds();
  return {drop <= 0.01 && t < 300.0, fmt("uniform 8-bit finetuned: test %.3f vs %.3f, drop %.2f pt, %.1f s", q.test_acc,
                                         base.fp.test_acc, 100.0 * drop, t)};
}

Verdict p6_memory() {
  auto fp_mb = [](const Dataset& ds) {
    const auto model = init_model(Arch::kGcn, ds.feature_dim(), ds.num_classes, 0);
    const auto layout = layout_of(model, make_context(ds.graph, true));
    return feature_memory_bits(model, layout, QuantConfig::full_precision()).feature_mb();
  };
  const double cora_mb = fp_mb(cora()), citeseer_mb = fp_mb(citeseer());
  const bool cora_ok = std::abs(cora_mb - 15.42) <= 0.1 * 15.42;
  const bool citeseer_ok = std::abs(citeseer_mb - 51.06) <= 0.1 * 51.06;

  const auto gcn = init_model(Arch::kGcn, cora().feature_dim(), cora().num_classes, 0);
  const auto ctx = make_context(cora().graph, true);
  const auto gcn_layout = layout_of(gcn, ctx);
  const auto full = feature_memory_bits(gcn, gcn_layout, QuantConfig::full_precision());
  bool ratios_ok = true;
  for (int q : {1, 2, 4, 8, 16}) {
    ratios_ok &= saving_ratio(full, feature_memory_bits(gcn, gcn_layout, QuantConfig::uniform(q))) == 32.0 / q;
  }

  const auto gat = init_model(Arch::kGatLite, cora().feature_dim(), cora().num_classes, 0);
  const auto layout = layout_of(gat, ctx);
  std::uint64_t count = 0;
  for (auto d : layout.embedding_dims) count += layout.num_nodes() * d;
  if (layout.stores_attention) count += layout.depth() * layout.attention_edges;
  const SearchSpace space{Granularity::kLwqCwqTaq, 2, {1, 2, 4, 8, 16}, DegreeBuckets::from_quartiles(ctx.degrees)};
  Rng rng(606);
  std::size_t cross_bad = 0;
  for (int i = 0; i < 100; ++i) {
    const auto cfg = random_config(space, rng);
    const auto bits = feature_memory_bits(gat, layout, cfg).total_feature_bits;
    cross_bad += std::llround(average_bits(cfg, layout) * double(count)) != static_cast<long long>(bits);
  }
  return {cora_ok && citeseer_ok && ratios_ok && cross_bad == 0,
          fmt("memory: Cora FP %.4g MB (15.42 +-10%%), Citeseer FP %.4g MB (51.06 +-10%%), 32/q ", cora_mb,
              citeseer_mb) +
              (ratios_ok ? "exact" : "inexact") + fmt(", %.0f of 100 average-bit cross-checks off", double(cross_bad))};
}

// Lifts a winner into the next finer granularity without changing any bit width.
QuantConfig refine(const QuantConfig& c, const DegreeBuckets& buckets) {
  const auto& s = c.slots();
  switch (c.granularity()) {
    case Granularity::kUniform:
      return QuantConfig::layer_wise({s[0], s[0]});
    case Granularity::kLwq: {
      const std::array<int, 2> per_layer[2] = {{s[0], s[0]}, {s[1], s[1]}};
      return QuantConfig::layer_component(per_layer);
    }
    case Granularity::kLwqCwq: {
      const int att[2] = {s[0], s[2]};
      const std::array<int, 4> com[2] = {{s[1], s[1], s[1], s[1]}, {s[3], s[3], s[3], s[3]}};
      return QuantConfig::layer_component_topology(att, com, buckets, {kDefaultTemplate.begin(), kDefaultTemplate.end()});
    }
    default:
      throw std::logic_error("no finer granularity");
  }
}

constexpr std::array<Granularity, 4> kLadder{Granularity::kUniform, Granularity::kLwq, Granularity::kLwqCwq,
                                             Granularity::kLwqCwqTaq};

/// Test error of the best validation config per granularity within `budget_mb`.
std::array<double, 4> granularity_errors(std::uint64_t seed, double budget_mb) {
  const Dataset& ds = cora();
  const auto params = default_params(seed);
  const auto trained = train_full_precision(Arch::kGatLite, ds, params).model;
  const auto ctx = make_context(ds.graph, true);
  const auto stats = calibrate_model(trained, ds.features, ctx);
  const auto layout = layout_of(trained, ctx);
  const auto buckets = DegreeBuckets::from_quartiles(ctx.degrees);
  auto mem = [&](const QuantConfig& c) { return feature_memory_bits(trained, layout, c).feature_mb(); };
  Rng rng(derive_seed(seed, 7));
  const std::size_t per_granularity = 8;

  std::array<double, 4> errors{};
  std::optional<QuantConfig> previous;
  std::printf("  seed %llu:", static_cast<unsigned long long>(seed));
  for (std::size_t k = 0; k < kLadder.size(); ++k) {
    const Granularity g = kLadder[k];
    std::vector<QuantConfig> candidates;
    if (previous) candidates.push_back(refine(*previous, buckets));
    if (g == Granularity::kUniform) {
      for (int q : kDefaultTemplate) {
        if (mem(QuantConfig::uniform(q)) <= budget_mb) candidates.push_back(QuantConfig::uniform(q));
      }
    } else {
      const SearchSpace space{g, 2, {kDefaultTemplate.begin(), kDefaultTemplate.end()},
                              topology_aware(g) ? std::optional(buckets) : std::nullopt};
      std::size_t drawn = 0;
      for (int tries = 0; drawn < per_granularity && tries < 100000; ++tries) {
        const auto c = random_config(space, rng);
        const double m = mem(c);
        if (m <= budget_mb && m >= 0.6 * budget_mb) {
          candidates.push_back(c);
          ++drawn;
        }
      }
    }
    double best_val = -1.0;
    for (const auto& c : candidates) {
      const auto r = finetune_quantized(trained, ds, ctx, stats, c, params);
      if (r.val_acc > best_val) {
        best_val = r.val_acc;
        errors[k] = 1.0 - r.test_acc;
        previous = c;
      }
    }
    std::printf(" %s %s (%.3f MB) err %.3f;", std::string(to_string(g)).c_str(), previous->id().c_str(),
                mem(*previous), errors[k]);
  }
  std::printf("\n");
  return errors;
}

void print_reference_configs() {
  const Dataset& ds = cora();
  const auto params = default_params(1);
  const auto trained = train_full_precision(Arch::kGatLite, ds, params).model;
  const auto ctx = make_context(ds.graph, true);
  const auto stats = calibrate_model(trained, ds.features, ctx);
  const auto layout = layout_of(trained, ctx);
  const std::array<int, 2> per_layer[2] = {{2, 4}, {2, 2}};
  const int att[2] = {2, 2};
  const std::array<int, 4> com[2] = {{4, 3, 2, 1}, {4, 3, 2, 1}};
  const std::vector<QuantConfig> configs{
      QuantConfig::uniform(4), QuantConfig::layer_wise({4, 1}), QuantConfig::layer_component(per_layer),
      QuantConfig::layer_component_topology(att, com, DegreeBuckets({6, 10, 16}), {1, 2, 3, 4, 8, 16})};
  for (const auto& c : configs) {
    const auto r = finetune_quantized(trained, ds, ctx, stats, c, params);
    std::printf("  reference %s: %.3f MB, test error %.3f\n", c.id().c_str(),
                feature_memory_bits(trained, layout, c).feature_mb(), 1.0 - r.test_acc);
  }
}

Verdict p7_granularity_ordering() {
  const Stopwatch clock;
  const double budget_mb = 2.0;
  std::array<std::vector<double>, 4> errors;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto e = granularity_errors(seed, budget_mb);
    for (std::size_t k = 0; k < 4; ++k) errors[k].push_back(e[k]);
  }
  print_reference_configs();
  std::array<double, 4> med{};
  for (std::size_t k = 0; k < 4; ++k) med[k] = median(errors[k]);
  const double slack = 0.005;
  const bool ordered = med[3] <= med[2] + slack && med[2] <= med[1] + slack && med[1] <= med[0] + slack;
  const double spread = med[0] - med[3];
  return {ordered && spread >= 0.01,
          fmt("granularity ordering at %.1f MB, GAT, median of 3 seeds: uniform %.3f, lwq %.3f, ", budget_mb, med[0],
              med[1]) +
              fmt("lwq_cwq %.3f, lwq_cwq_taq %.3f, spread %.1f pt, ", med[2], med[3], 100.0 * spread) +
              fmt("%.0f s", clock.seconds())};
}

double oracle_accuracy(const QuantConfig& cfg) {
  double loss = 0.0;
  for (int b : cfg.slots()) loss += std::max(0, 16 - b);
  return 1.0 - 0.01 * loss;
}

struct OracleSetup {
  FeatureLayout layout;
  DegreeBuckets buckets;
  MemoryFn memory;
};

const OracleSetup& oracle_setup() {
  static const OracleSetup setup = [] {
    OracleSetup s;
    const auto model = init_model(Arch::kGatLite, cora().feature_dim(), cora().num_classes, 0);
    const auto ctx = make_context(cora().graph, true);
    s.layout = layout_of(model, ctx);
    s.buckets = DegreeBuckets::from_quartiles(ctx.degrees);
    s.memory = [layout = s.layout](const QuantConfig& c) { return average_bits(c, layout); };
    return s;
  }();
  return setup;
}

std::optional<QuantConfig> brute_force(const SearchSpace& space, double drop) {
  const auto& memory = oracle_setup().memory;
  std::optional<QuantConfig> best;
  double best_mem = std::numeric_limits<double>::infinity(), best_acc = 0.0;
  for (const auto& c : enumerate_space(space)) {
    const double acc = oracle_accuracy(c);
    if (!within_drop(1.0, acc, drop)) continue;
    const double m = memory(c);
    if (m < best_mem || (m == best_mem && acc > best_acc)) {
      best = c;
      best_mem = m;
      best_acc = acc;
    }
  }
  return best;
}

Verdict p8_abs_correctness() {
  const Stopwatch clock;
  const auto& memory = oracle_setup().memory;
  const std::vector<int> tmpl{kDefaultTemplate.begin(), kDefaultTemplate.end()};

  const SearchSpace uniform_space{Granularity::kUniform, 2, tmpl, std::nullopt};
  const SearchSpace space{Granularity::kLwqCwq, 2, tmpl, std::nullopt};
  const double drop = 0.1;
  const auto uniform_truth = brute_force(uniform_space, drop);
  const auto truth = brute_force(space, drop);
  int uniform_hits = 0, hits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SearchParams p;
    p.seed = seed;
    p.drop_threshold = drop;
    const auto u = explore(uniform_space, oracle_accuracy, 1.0, p, memory);
    uniform_hits += u.best_config == uniform_truth;
    const auto r = explore(space, oracle_accuracy, 1.0, p, memory);
    hits += r.best_config == truth;
  }

  int exhaustive_hits = 0, exhaustive_runs = 0;
  for (double d : {0.05, 0.1, 0.2, 0.4}) {
    SearchParams p;
    p.seed = 3;
    p.drop_threshold = d;
    p.n_iter = 1;
    p.n_mea = p.n_sample = space.size();
    const auto r = explore(space, oracle_accuracy, 1.0, p, memory);
    ++exhaustive_runs;
    exhaustive_hits += r.best_config == brute_force(space, d);
  }
  const double t = clock.seconds();
  return {uniform_hits == 10 && hits >= 9 && exhaustive_hits == exhaustive_runs && t < 60.0,
          fmt("ABS correctness: uniform optimum %.0f/10, lwq_cwq optimum %.0f/10 at 40x5, ", uniform_hits, hits) +
              fmt("exhaustive %.0f/%.0f, %.1f s", exhaustive_hits, exhaustive_runs, t)};
}

/// Two-sided Mann-Whitney z statistic with the normal approximation.
double mann_whitney_z(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a) {
    for (double y : b) u += x > y ? 1.0 : x == y ? 0.5 : 0.0;
  }
  const double n1 = double(a.size()), n2 = double(b.size());
  return (u - n1 * n2 / 2.0) / std::sqrt(n1 * n2 * (n1 + n2 + 1.0) / 12.0);
}

Verdict p9_abs_vs_random() {
  const auto& setup = oracle_setup();
  const SearchSpace space{Granularity::kLwqCwqTaq, 2, {kDefaultTemplate.begin(), kDefaultTemplate.end()},
                          setup.buckets};
  const double drop = 0.8;
  const auto inf = std::numeric_limits<double>::infinity();
  std::vector<double> abs_mem, rnd_mem, abs_40, rnd_40;
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    SearchParams p;
    p.seed = seed;
    p.drop_threshold = drop;
    const auto a = explore(space, oracle_accuracy, 1.0, p, setup.memory);
    const auto r = random_search(space, oracle_accuracy, 1.0, p, setup.memory);
    abs_mem.push_back(a.feasible() ? a.memory : inf);
    rnd_mem.push_back(r.feasible() ? r.memory : inf);
    abs_40.push_back(a.trajectory.front());
    rnd_40.push_back(r.trajectory.front());
  }
  const double z = mann_whitney_z(abs_40, rnd_40);
  const double abs_med = median(abs_mem), rnd_med = median(rnd_mem);
  return {abs_med <= rnd_med && std::abs(z) < 1.96,
          fmt("ABS vs random, 15 seeds: median memory %.3f vs %.3f avg bits; after 40 evals %.3f vs %.3f ", abs_med,
              rnd_med, median(abs_40), median(rnd_40)) +
              fmt("(Mann-Whitney z %.2f)", z)};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

int shell(const std::string& command) { return std::system((command + " >/dev/null 2>&1").c_str()); }

/// Runs every subcommand into `dir`; returns the failing command or empty.
std::string run_pipeline(const fs::path& dir) {
  const std::string cli = quoted(SGQ_CLI_PATH);
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto data = quoted(dir / "cora.sgqd"), out = quoted(dir / "run");
  save_config(QuantConfig::layer_wise({4, 2}), dir / "lwq.json");
  const std::vector<std::string> commands{
      cli + " synth --name cora --out " + data,
      cli + " train --dataset " + data + " --arch gcn --seed 2 --out " + out,
      cli + " quantize-eval --dataset " + data + " --checkpoint " + quoted(dir / "run" / "model.sgqm") +
          " --config " + quoted(dir / "lwq.json") + " --epochs 20 --out " + out,
      cli + " search --dataset " + data + " --checkpoint " + quoted(dir / "run" / "model.sgqm") +
          " --granularity lwq_cwq --n-mea 4 --n-iter 2 --n-sample 50 --search-epochs 5 --epochs 20"
          " --drop-threshold 0.05 --jobs 2 --out " +
          out,
      cli + " report " + out,
  };
  for (const auto& c : commands) {
    if (shell(c) != 0) return c;
  }
  return {};
}

Verdict p10_determinism() {
  const auto root = fs::temp_directory_path() / "sgq_acceptance_determinism";
  for (const char* run : {"a", "b"}) {
    if (const auto failed = run_pipeline(root / run); !failed.empty()) return {false, "determinism: command failed: " + failed};
  }
  const std::vector<fs::path> files{"cora.sgqd",          "run/model.sgqm",  "run/metrics.csv", "run/search_log.csv",
                                    "run/trajectory.csv", "run/winner.json", "run/granularity_series.csv"};
  std::vector<std::string> differing;
  for (const auto& f : files) {
    if (!fs::exists(root / "a" / f) || slurp(root / "a" / f) != slurp(root / "b" / f)) differing.push_back(f.string());
  }
  std::string detail = fmt("determinism: %.0f of %.0f outputs byte-identical across reruns", double(files.size() - differing.size()),
                           double(files.size()));
  for (const auto& d : differing) detail += " [differs: " + d + "]";
  return {differing.empty(), detail};
}

}  // namespace
}  // namespace sgq

int main() {
  using namespace sgq;
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"P1", p1_round_trip},      {"P2", p2_ste_identity},        {"P3", p3_autodiff},
      {"P4", p4_full_precision},  {"P5", p5_uniform_eight},       {"P6", p6_memory},
      {"P7", p7_granularity_ordering}, {"P8", p8_abs_correctness}, {"P9", p9_abs_vs_random},
      {"P10", p10_determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s %s  %s\n", name, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
