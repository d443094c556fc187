#include "sgq/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <unordered_set>

#include "sgq/random.hpp"

namespace sgq {

double RegressionTree::predict(std::span<const double> features) const {
  return nodes_[leaf_of(features)].value;
}

std::size_t RegressionTree::leaf_of(std::span<const double> features) const {
  if (features.size() != num_features_) {
    throw std::invalid_argument("RegressionTree::predict: expected " + std::to_string(num_features_) +
                                " features, got " + std::to_string(features.size()));
  }
  std::size_t i = 0;
  while (nodes_[i].feature >= 0) {
    const auto& n = nodes_[i];
    i = static_cast<std::size_t>(features[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return i;
}

std::size_t RegressionTree::depth() const {
  std::vector<std::size_t> level(nodes_.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    deepest = std::max(deepest, level[i]);
    if (nodes_[i].feature >= 0) {
      level[static_cast<std::size_t>(nodes_[i].left)] = level[i] + 1;
      level[static_cast<std::size_t>(nodes_[i].right)] = level[i] + 1;
    }
  }
  return deepest;
}

std::size_t RegressionTree::num_leaves() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.feature < 0; }));
}

namespace {

struct TreeBuilder {
  std::span<const CostSample> samples;
  std::size_t num_features;
  std::size_t max_depth;
  std::size_t min_leaf;
  std::vector<RegressionTree::Node> nodes;

  int build(std::vector<std::size_t> idx, std::size_t depth) {
    const std::size_t n = idx.size();
    double total = 0.0, total_sq = 0.0;
    for (auto i : idx) {
      total += samples[i].accuracy;
      total_sq += samples[i].accuracy * samples[i].accuracy;
    }
    const double mean = total / static_cast<double>(n);
    double sse = 0.0;
    for (auto i : idx) sse += (samples[i].accuracy - mean) * (samples[i].accuracy - mean);

    const int self = static_cast<int>(nodes.size());
    nodes.push_back({-1, 0.0, -1, -1, mean, n});
    if (depth >= max_depth || n < 2 * min_leaf || sse <= 1e-15) return self;

    int best_feature = -1;
    double best_threshold = 0.0, best_gain = 0.0;
    std::vector<std::size_t> order(idx);
    for (std::size_t f = 0; f < num_features; ++f) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return samples[a].features[f] < samples[b].features[f]; });
      double left_sum = 0.0, left_sq = 0.0;
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const double y = samples[order[k]].accuracy;
        left_sum += y;
        left_sq += y * y;
        const double x0 = samples[order[k]].features[f], x1 = samples[order[k + 1]].features[f];
        const std::size_t nl = k + 1, nr = n - nl;
        if (x0 == x1 || nl < min_leaf || nr < min_leaf) continue;
        const double right_sum = total - left_sum, right_sq = total_sq - left_sq;
        const double sse_l = left_sq - left_sum * left_sum / static_cast<double>(nl);
        const double sse_r = right_sq - right_sum * right_sum / static_cast<double>(nr);
        const double gain = sse - sse_l - sse_r;
        // Strict improvement keeps the earliest (feature, threshold) on ties.
        if (gain > best_gain + 1e-12 * std::max(1.0, sse)) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (x0 + x1);
        }
      }
    }
    if (best_feature < 0) return self;

    std::vector<std::size_t> left, right;
    for (auto i : idx) {
      (samples[i].features[static_cast<std::size_t>(best_feature)] <= best_threshold ? left : right).push_back(i);
    }
    nodes[static_cast<std::size_t>(self)].feature = best_feature;
    nodes[static_cast<std::size_t>(self)].threshold = best_threshold;
    const int l = build(std::move(left), depth + 1);
    nodes[static_cast<std::size_t>(self)].left = l;
    const int r = build(std::move(right), depth + 1);
    nodes[static_cast<std::size_t>(self)].right = r;
    return self;
  }
};

}  // namespace

RegressionTree fit_tree(std::span<const CostSample> samples, std::size_t max_depth, std::size_t min_samples_leaf) {
  if (samples.empty()) throw std::invalid_argument("fit_tree: empty sample list");
  if (min_samples_leaf == 0) throw std::invalid_argument("fit_tree: min_samples_leaf must be >= 1");
  const std::size_t d = samples.front().features.size();
  for (const auto& s : samples) {
    if (s.features.size() != d) throw std::invalid_argument("fit_tree: ragged feature vectors");
    if (!std::isfinite(s.accuracy)) throw std::invalid_argument("fit_tree: non-finite target");
  }
  TreeBuilder builder{samples, d, max_depth, min_samples_leaf, {}};
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  builder.build(std::move(idx), 0);
  return RegressionTree(std::move(builder.nodes), d);
}

std::string_view to_string(SelectionRule rule) {
  switch (rule) {
    case SelectionRule::kTopPredicted: return "top-predicted";
    case SelectionRule::kCheapestPredictedFeasible: return "cheapest-feasible";
  }
  return "?";
}

SelectionRule parse_selection_rule(std::string_view text) {
  for (auto r : {SelectionRule::kTopPredicted, SelectionRule::kCheapestPredictedFeasible}) {
    if (to_string(r) == text) return r;
  }
  throw std::invalid_argument("unknown selection rule '" + std::string(text) + "'");
}

void SearchParams::validate() const {
  if (n_mea == 0 || n_iter == 0 || n_sample == 0) throw std::invalid_argument("SearchParams: counts must be positive");
  if (n_sample < n_mea) throw std::invalid_argument("SearchParams: n_sample must be >= n_mea");
  if (!(drop_threshold >= 0.0)) throw std::invalid_argument("SearchParams: drop_threshold must be >= 0");
}

std::size_t effective_jobs(std::size_t requested) {
  const char* det = std::getenv("SGQ_DETERMINISTIC");
  if (det && std::string_view(det) == "1") return 1;
  return std::max<std::size_t>(1, requested);
}

bool within_drop(double full_precision_acc, double accuracy, double drop_threshold) {
  return full_precision_acc - accuracy < drop_threshold;
}

std::optional<std::size_t> best_feasible(std::span<const Measurement> measured, double full_precision_acc,
                                         double drop_threshold) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < measured.size(); ++i) {
    const auto& m = measured[i];
    if (!within_drop(full_precision_acc, m.accuracy, drop_threshold)) continue;
    if (!best || m.memory < measured[*best].memory ||
        (m.memory == measured[*best].memory && m.accuracy > measured[*best].accuracy)) {
      best = i;
    }
  }
  return best;
}

namespace {

/// Evaluates a batch, possibly concurrently; results land at their batch index.
std::vector<double> evaluate_batch(const std::vector<QuantConfig>& batch, const Evaluator& evaluator, std::size_t jobs) {
  std::vector<double> out(batch.size(), 0.0);
  jobs = std::min(effective_jobs(jobs), std::max<std::size_t>(1, batch.size()));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) out[i] = evaluator(batch[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < batch.size(); i = next++) {
        try {
          out[i] = evaluator(batch[i]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

/// Up to `count` distinct configs not in `exclude`; the whole remaining space
/// when it is small enough to enumerate.
std::vector<QuantConfig> draw_distinct(const SearchSpace& space, std::size_t count, Rng& rng,
                                       const std::unordered_set<std::string>& exclude) {
  std::vector<QuantConfig> out;
  if (space.size() <= count + exclude.size()) {
    for (auto& cfg : enumerate_space(space)) {
      if (!exclude.count(cfg.id())) out.push_back(std::move(cfg));
    }
    return out;
  }
  std::unordered_set<std::string> seen;
  while (out.size() < count) {
    auto cfg = random_config(space, rng);
    const auto id = cfg.id();
    if (exclude.count(id) || !seen.insert(id).second) continue;
    out.push_back(std::move(cfg));
  }
  return out;
}

class SearchState {
 public:
  SearchState(const Evaluator& evaluator, const MemoryFn& memory_fn, double fp_acc, const SearchParams& params)
      : evaluator_(evaluator), memory_fn_(memory_fn), fp_acc_(fp_acc), params_(params) {}

  void measure(std::vector<QuantConfig> batch, const std::vector<std::optional<double>>& predicted, std::size_t iteration) {
    const auto acc = evaluate_batch(batch, evaluator_, params_.jobs);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      measured_ids_.insert(batch[i].id());
      const double mem = memory_fn_(batch[i]);
      result_.all_measured.push_back({iteration, std::move(batch[i]), predicted[i], acc[i], mem});
    }
    const auto best = best_feasible(result_.all_measured, fp_acc_, params_.drop_threshold);
    result_.trajectory.push_back(best ? result_.all_measured[*best].memory : std::numeric_limits<double>::infinity());
  }

  SearchResult finish() {
    const auto best = best_feasible(result_.all_measured, fp_acc_, params_.drop_threshold);
    if (best) {
      const auto& m = result_.all_measured[*best];
      result_.best_config = m.config;
      result_.accuracy = m.accuracy;
      result_.memory = m.memory;
    }
    return std::move(result_);
  }

  const std::unordered_set<std::string>& measured_ids() const { return measured_ids_; }
  const SearchResult& partial() const { return result_; }

 private:
  const Evaluator& evaluator_;
  const MemoryFn& memory_fn_;
  double fp_acc_;
  const SearchParams& params_;
  SearchResult result_;
  std::unordered_set<std::string> measured_ids_;
};

struct Candidate {
  QuantConfig config;
  std::string id;
  double predicted;
  double memory;
};

std::vector<std::size_t> select_candidates(const std::vector<Candidate>& cands, const SearchParams& params,
                                           double fp_acc) {
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  auto by_prediction = [&](std::size_t a, std::size_t b) {
    if (cands[a].predicted != cands[b].predicted) return cands[a].predicted > cands[b].predicted;
    if (cands[a].memory != cands[b].memory) return cands[a].memory < cands[b].memory;
    return cands[a].id < cands[b].id;
  };
  if (params.rule == SelectionRule::kTopPredicted) {
    std::sort(order.begin(), order.end(), by_prediction);
  } else {
    auto feasible = [&](std::size_t i) { return within_drop(fp_acc, cands[i].predicted, params.drop_threshold); };
    auto mid = std::stable_partition(order.begin(), order.end(), feasible);
    std::sort(order.begin(), mid, [&](std::size_t a, std::size_t b) {
      if (cands[a].memory != cands[b].memory) return cands[a].memory < cands[b].memory;
      return by_prediction(a, b);
    });
    std::sort(mid, order.end(), by_prediction);
  }
  order.resize(std::min(order.size(), params.n_mea));
  return order;
}

}  // namespace

SearchResult explore(const SearchSpace& space, const Evaluator& evaluator, double full_precision_acc,
                     const SearchParams& params, const MemoryFn& memory_fn) {
  params.validate();
  Rng rng(derive_seed(params.seed, 0));
  SearchState state(evaluator, memory_fn, full_precision_acc, params);

  auto initial = draw_distinct(space, params.n_mea, rng, {});
  const std::size_t n_initial = initial.size();
  state.measure(std::move(initial), std::vector<std::optional<double>>(n_initial), 1);

  for (std::size_t iter = 2; iter <= params.n_iter; ++iter) {
    std::vector<CostSample> samples;
    for (const auto& m : state.partial().all_measured) samples.push_back({encode_features(m.config), m.accuracy});
    const auto tree = fit_tree(samples, params.max_depth, params.min_samples_leaf);

    auto pool = draw_distinct(space, params.n_sample, rng, state.measured_ids());
    if (pool.empty()) break;
    std::vector<Candidate> cands;
    cands.reserve(pool.size());
    for (auto& cfg : pool) {
      const double pred = tree.predict(encode_features(cfg));
      const double mem = memory_fn(cfg);
      auto id = cfg.id();
      cands.push_back({std::move(cfg), std::move(id), pred, mem});
    }
    std::vector<QuantConfig> batch;
    std::vector<std::optional<double>> predicted;
    for (auto i : select_candidates(cands, params, full_precision_acc)) {
      batch.push_back(cands[i].config);
      predicted.emplace_back(cands[i].predicted);
    }
    state.measure(std::move(batch), predicted, iter);
  }
  return state.finish();
}

SearchResult random_search(const SearchSpace& space, const Evaluator& evaluator, double full_precision_acc,
                           const SearchParams& params, const MemoryFn& memory_fn) {
  params.validate();
  Rng rng(derive_seed(params.seed, 1));
  SearchState state(evaluator, memory_fn, full_precision_acc, params);
  for (std::size_t iter = 1; iter <= params.n_iter; ++iter) {
    auto batch = draw_distinct(space, params.n_mea, rng, state.measured_ids());
    if (batch.empty()) break;
    const std::size_t n = batch.size();
    state.measure(std::move(batch), std::vector<std::optional<double>>(n), iter);
  }
  return state.finish();
}

}  // namespace sgq
