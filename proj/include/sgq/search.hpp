#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgq/quant_config.hpp"

namespace sgq {

struct CostSample {
  std::vector<double> features;
  double accuracy = 0.0;
};

/// CART regression tree with mean-valued leaves.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // go left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    double value = 0.0;  // mean target of the samples reaching this node
    std::size_t count = 0;
  };

  RegressionTree(std::vector<Node> nodes, std::size_t num_features) : nodes_(std::move(nodes)), num_features_(num_features) {}

  /// Throws std::invalid_argument on a feature-length mismatch.
  double predict(std::span<const double> features) const;
  /// Index of the leaf a feature vector routes to.
  std::size_t leaf_of(std::span<const double> features) const;

  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t num_features() const { return num_features_; }
  std::size_t depth() const;
  std::size_t num_leaves() const;

 private:
  std::vector<Node> nodes_;
  std::size_t num_features_;
};

/// Greedy variance-reduction splits with midpoint thresholds. Ties go to the
/// lowest feature index, then the lowest threshold. Throws on empty input or
/// ragged feature vectors.
RegressionTree fit_tree(std::span<const CostSample> samples, std::size_t max_depth = 6, std::size_t min_samples_leaf = 2);

/// How Step 3 turns tree predictions into the next batch to measure.
enum class SelectionRule {
  kTopPredicted,             // highest predicted accuracy
  kCheapestPredictedFeasible,  // lowest memory among predicted-feasible, then highest predicted
};

std::string_view to_string(SelectionRule rule);
SelectionRule parse_selection_rule(std::string_view text);

struct SearchParams {
  std::size_t n_mea = 40;
  std::size_t n_iter = 5;
  std::size_t n_sample = 2000;
  double drop_threshold = 0.005;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::size_t max_depth = 6;
  std::size_t min_samples_leaf = 2;
  SelectionRule rule = SelectionRule::kCheapestPredictedFeasible;

  /// Throws std::invalid_argument unless all counts are positive and n_sample >= n_mea.
  void validate() const;
};

/// Config -> measured accuracy. Must be deterministic and safe to call
/// concurrently when jobs > 1.
using Evaluator = std::function<double(const QuantConfig&)>;
/// Config -> memory cost (any unit, lower is better).
using MemoryFn = std::function<double(const QuantConfig&)>;

struct Measurement {
  std::size_t iteration = 0;  // 1-based
  QuantConfig config;
  std::optional<double> predicted;  // absent for the initial random batch
  double accuracy = 0.0;
  double memory = 0.0;
};

struct SearchResult {
  std::optional<QuantConfig> best_config;  // absent: no feasible config
  double accuracy = 0.0;
  double memory = 0.0;
  std::vector<Measurement> all_measured;
  std::vector<double> trajectory;  // best feasible memory after each iteration; +inf while none

  bool feasible() const { return best_config.has_value(); }
};

/// Whether a measured accuracy passes the drop filter.
bool within_drop(double full_precision_acc, double accuracy, double drop_threshold);

/// Lowest-memory measured config passing the drop filter (ties: higher
/// accuracy, then earlier measurement).
std::optional<std::size_t> best_feasible(std::span<const Measurement> measured, double full_precision_acc,
                                         double drop_threshold);

/// Iterative tree-guided search: an initial random batch, then n_iter - 1
/// rounds of fit / sample / select / measure. Evaluator calls total n_mea * n_iter
/// unless the space runs out of unmeasured configs.
SearchResult explore(const SearchSpace& space, const Evaluator& evaluator, double full_precision_acc,
                     const SearchParams& params, const MemoryFn& memory_fn);

/// Same budget and filter, every config drawn at random.
SearchResult random_search(const SearchSpace& space, const Evaluator& evaluator, double full_precision_acc,
                           const SearchParams& params, const MemoryFn& memory_fn);

/// Honors SGQ_DETERMINISTIC=1 (forces 1).
std::size_t effective_jobs(std::size_t requested);

}  // namespace sgq
