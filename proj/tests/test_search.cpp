#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <map>
#include <set>
#include <limits>

#include "sgq/search.hpp"
#include "test_util.hpp"

namespace sgq {
namespace {

const std::vector<int> kTemplate{1, 2, 4, 8, 16};

// Closed-form oracle: every bit below 16 costs one point.
double oracle_accuracy(const QuantConfig& cfg) {
  double loss = 0.0;
  for (int b : cfg.slots()) loss += std::max(0, 16 - b);
  return 1.0 - 0.01 * loss;
}

FeatureLayout gat_layout() {
  FeatureLayout layout;
  layout.embedding_dims = {1433, 256};
  layout.degrees.assign(2708, 4);
  layout.stores_attention = true;
  layout.attention_edges = 13566;
  return layout;
}

double layout_memory(const QuantConfig& cfg) {
  static const auto layout = gat_layout();
  return average_bits(cfg, layout);
}

TEST(FitTree, ConstantTargetsGiveOneLeaf) {
  std::vector<CostSample> s{{{1, 2}, 0.7}, {{3, 4}, 0.7}, {{5, 0}, 0.7}};
  const auto tree = fit_tree(s);
  EXPECT_EQ(tree.num_leaves(), 1u);
  EXPECT_DOUBLE_EQ(tree.predict(std::vector<double>{9, 9}), 0.7);
}

TEST(FitTree, PerfectSplit) {
  std::vector<CostSample> s{{{0}, 0}, {{0}, 0}, {{1}, 1}, {{1}, 1}};
  const auto tree = fit_tree(s);
  const auto& root = tree.nodes()[0];
  EXPECT_EQ(root.feature, 0);
  EXPECT_DOUBLE_EQ(root.threshold, 0.5);
  EXPECT_EQ(tree.num_leaves(), 2u);
  EXPECT_DOUBLE_EQ(tree.predict(std::vector<double>{0}), 0.0);
  EXPECT_DOUBLE_EQ(tree.predict(std::vector<double>{1}), 1.0);
}

TEST(FitTree, Errors) {
  EXPECT_THROW(fit_tree(std::vector<CostSample>{}), std::invalid_argument);
  std::vector<CostSample> ragged{{{0, 1}, 0}, {{1}, 1}};
  EXPECT_THROW(fit_tree(ragged), std::invalid_argument);
  std::vector<CostSample> ok{{{0, 1}, 0}, {{1, 1}, 1}};
  EXPECT_THROW(fit_tree(ok).predict(std::vector<double>{1}), std::invalid_argument);
}

double sse(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s;
}

TEST(FitTree, RootSplitMatchesExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    std::vector<CostSample> s(20);
    for (auto& c : s) {
      c.features = {uniform01(rng), uniform01(rng), uniform01(rng)};
      c.accuracy = uniform01(rng);
    }
    std::vector<double> all;
    for (const auto& c : s) all.push_back(c.accuracy);
    double best_gain = -1.0;
    for (std::size_t f = 0; f < 3; ++f) {
      for (const auto& pivot : s) {
        std::vector<double> l, r;
        for (const auto& c : s) (c.features[f] <= pivot.features[f] ? l : r).push_back(c.accuracy);
        if (l.empty() || r.empty()) continue;
        best_gain = std::max(best_gain, sse(all) - sse(l) - sse(r));
      }
    }
    const auto tree = fit_tree(s, 2, 1);
    const auto& root = tree.nodes()[0];
    ASSERT_GE(root.feature, 0);
    std::vector<double> l, r;
    for (const auto& c : s) (c.features[root.feature] <= root.threshold ? l : r).push_back(c.accuracy);
    EXPECT_NEAR(sse(all) - sse(l) - sse(r), best_gain, 1e-12);
    EXPECT_LE(tree.depth(), 2u);
  }
}

TEST(FitTree, LeafMeansAndBounds) {
  Rng rng(7);
  std::vector<CostSample> s(60);
  for (auto& c : s) {
    c.features = {double(uniform_index(rng, 5)), double(uniform_index(rng, 5))};
    c.accuracy = uniform(rng, 0.2, 0.9);
  }
  const auto tree = fit_tree(s, 4, 2);
  std::map<std::size_t, std::pair<double, int>> by_leaf;
  for (const auto& c : s) {
    auto& [sum, n] = by_leaf[tree.leaf_of(c.features)];
    sum += c.accuracy;
    ++n;
  }
  for (const auto& c : s) {
    const auto& [sum, n] = by_leaf[tree.leaf_of(c.features)];
    EXPECT_NEAR(tree.predict(c.features), sum / n, 1e-12);
    EXPECT_GE(n, 2);
  }
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> x{uniform(rng, -3, 8), uniform(rng, -3, 8)};
    EXPECT_GE(tree.predict(x), 0.2);
    EXPECT_LE(tree.predict(x), 0.9);
  }
}

SearchParams params(std::uint64_t seed, double drop) {
  SearchParams p;
  p.seed = seed;
  p.drop_threshold = drop;
  return p;
}

TEST(Explore, UniformOracleFindsEightBits) {
  const SearchSpace space{Granularity::kUniform, 2, kTemplate, std::nullopt};
  auto p = params(1, 0.1);
  p.n_mea = 2;
  p.n_iter = 2;
  p.n_sample = 5;
  const auto r = explore(space, oracle_accuracy, 1.0, p, layout_memory);
  ASSERT_TRUE(r.feasible());
  EXPECT_EQ(*r.best_config, QuantConfig::uniform(8));
}

TEST(Explore, ExhaustiveSpaceGivesTrueOptimum) {
  const SearchSpace space{Granularity::kLwqCwq, 2, kTemplate, std::nullopt};
  const auto all = enumerate_space(space);
  for (double drop : {0.05, 0.1, 0.2}) {
    std::optional<QuantConfig> best;
    double best_mem = std::numeric_limits<double>::infinity(), best_acc = 0;
    for (const auto& c : all) {
      const double acc = oracle_accuracy(c);
      if (!within_drop(1.0, acc, drop)) continue;
      const double mem = layout_memory(c);
      if (mem < best_mem || (mem == best_mem && acc > best_acc)) {
        best = c;
        best_mem = mem;
        best_acc = acc;
      }
    }
    auto p = params(3, drop);
    p.n_iter = 1;
    p.n_mea = all.size();
    p.n_sample = all.size();
    const auto r = explore(space, oracle_accuracy, 1.0, p, layout_memory);
    ASSERT_TRUE(r.feasible());
    EXPECT_EQ(r.all_measured.size(), all.size());
    EXPECT_DOUBLE_EQ(r.memory, best_mem);
    EXPECT_EQ(*r.best_config, *best);
  }
}

TEST(Explore, BudgetAndFilterContract) {
  const SearchSpace space{Granularity::kLwqCwqTaq, 2, kTemplate, DegreeBuckets({2, 4, 8})};
  std::atomic<int> calls = 0;
  const Evaluator counting = [&](const QuantConfig& c) {
    ++calls;
    return oracle_accuracy(c);
  };
  const auto p = params(5, 0.8);
  const auto r = explore(space, counting, 1.0, p, layout_memory);
  EXPECT_EQ(calls.load(), 200);
  EXPECT_EQ(r.all_measured.size(), 200u);
  ASSERT_TRUE(r.feasible());
  EXPECT_TRUE(within_drop(1.0, r.accuracy, 0.8));
  EXPECT_DOUBLE_EQ(r.accuracy, oracle_accuracy(*r.best_config));
  EXPECT_EQ(r.trajectory.size(), 5u);
  for (std::size_t i = 1; i < r.trajectory.size(); ++i) EXPECT_LE(r.trajectory[i], r.trajectory[i - 1]);
  EXPECT_DOUBLE_EQ(r.trajectory.back(), r.memory);
  for (const auto& m : r.all_measured) {
    EXPECT_EQ(m.predicted.has_value(), m.iteration > 1);
    if (within_drop(1.0, m.accuracy, 0.8)) EXPECT_GE(m.memory, r.memory);
  }
  std::set<std::vector<int>> distinct;
  for (const auto& m : r.all_measured) distinct.insert(m.config.slots());
  EXPECT_EQ(distinct.size(), 200u);
}

TEST(Explore, Deterministic) {
  const SearchSpace space{Granularity::kLwqCwq, 2, kTemplate, std::nullopt};
  const auto a = explore(space, oracle_accuracy, 1.0, params(9, 0.5), layout_memory);
  const auto b = explore(space, oracle_accuracy, 1.0, params(9, 0.5), layout_memory);
  ASSERT_EQ(a.all_measured.size(), b.all_measured.size());
  for (std::size_t i = 0; i < a.all_measured.size(); ++i) {
    EXPECT_EQ(a.all_measured[i].config, b.all_measured[i].config);
    EXPECT_EQ(a.all_measured[i].predicted, b.all_measured[i].predicted);
  }
  EXPECT_EQ(a.best_config, b.best_config);
  EXPECT_EQ(a.trajectory, b.trajectory);
}

TEST(Explore, JobsDoNotChangeResult) {
  const SearchSpace space{Granularity::kLwqCwq, 2, kTemplate, std::nullopt};
  auto p = params(11, 0.5);
  const auto serial = explore(space, oracle_accuracy, 1.0, p, layout_memory);
  p.jobs = 4;
  const auto parallel = explore(space, oracle_accuracy, 1.0, p, layout_memory);
  ASSERT_EQ(serial.all_measured.size(), parallel.all_measured.size());
  for (std::size_t i = 0; i < serial.all_measured.size(); ++i) {
    EXPECT_EQ(serial.all_measured[i].config, parallel.all_measured[i].config);
    EXPECT_EQ(serial.all_measured[i].accuracy, parallel.all_measured[i].accuracy);
  }
  EXPECT_EQ(serial.best_config, parallel.best_config);
}

TEST(Explore, InfeasibleKeepsMeasurements) {
  const SearchSpace space{Granularity::kLwq, 2, kTemplate, std::nullopt};
  auto p = params(2, 0.0);
  p.n_mea = 5;
  p.n_iter = 2;
  p.n_sample = 20;
  const auto r = explore(space, oracle_accuracy, 1.0, p, layout_memory);
  EXPECT_FALSE(r.feasible());
  EXPECT_EQ(r.all_measured.size(), 10u);
  for (double t : r.trajectory) EXPECT_TRUE(std::isinf(t));
}

TEST(Explore, TopPredictedRuleStillHonorsContract) {
  const SearchSpace space{Granularity::kLwqCwq, 2, kTemplate, std::nullopt};
  auto p = params(4, 0.5);
  p.rule = SelectionRule::kTopPredicted;
  const auto r = explore(space, oracle_accuracy, 1.0, p, layout_memory);
  EXPECT_EQ(r.all_measured.size(), 200u);
  ASSERT_TRUE(r.feasible());
  EXPECT_TRUE(within_drop(1.0, r.accuracy, 0.5));
}

TEST(RandomSearch, SameBudget) {
  const SearchSpace space{Granularity::kLwqCwq, 2, kTemplate, std::nullopt};
  const auto r = random_search(space, oracle_accuracy, 1.0, params(6, 0.5), layout_memory);
  EXPECT_EQ(r.all_measured.size(), 200u);
  for (const auto& m : r.all_measured) EXPECT_FALSE(m.predicted.has_value());
}

TEST(SearchParams, Validation) {
  SearchParams p;
  p.n_mea = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = SearchParams{};
  p.n_sample = 10;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  EXPECT_EQ(parse_selection_rule("top-predicted"), SelectionRule::kTopPredicted);
  EXPECT_THROW(parse_selection_rule("best"), std::invalid_argument);
}

}  // namespace
}  // namespace sgq
