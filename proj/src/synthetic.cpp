#include "sgq/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

#include "sgq/random.hpp"

namespace sgq {

std::size_t CitationLikeSpec::num_nodes() const {
  return std::accumulate(class_sizes.begin(), class_sizes.end(), std::size_t{0});
}

CitationLikeSpec cora_like(std::uint64_t seed) {
  CitationLikeSpec spec;
  spec.name = "cora";
  spec.feature_dim = 1433;
  spec.class_sizes = {351, 217, 418, 818, 426, 298, 180};
  spec.undirected_links = 5429;
  // Mixing and topic strength are set so a 2-layer GCN lands near 81% and a
  // graph-free model near 57%, the usual accuracies on the published data.
  spec.homophily = 0.68;
  spec.topic_affinity = 0.18;
  spec.words_per_node = 18.2;
  spec.seed = seed;
  return spec;
}

CitationLikeSpec citeseer_like(std::uint64_t seed) {
  CitationLikeSpec spec;
  spec.name = "citeseer";
  spec.feature_dim = 3703;
  spec.class_sizes = {264, 590, 668, 701, 596, 508};
  spec.undirected_links = 4732;
  spec.homophily = 0.58;
  spec.topic_affinity = 0.14;
  spec.words_per_node = 31.7;
  spec.seed = seed;
  return spec;
}

namespace {

/// Weighted sampler over a fixed population (inverse CDF by binary search).
class WeightedPicker {
 public:
  WeightedPicker(std::vector<NodeId> items, const std::vector<double>& weight_of) : items_(std::move(items)) {
    cumulative_.reserve(items_.size());
    double total = 0.0;
    for (NodeId v : items_) {
      total += weight_of[v];
      cumulative_.push_back(total);
    }
  }
  NodeId pick(Rng& rng) const {
    const double x = uniform01(rng) * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
    if (it == cumulative_.end()) --it;
    return items_[static_cast<std::size_t>(it - cumulative_.begin())];
  }

 private:
  std::vector<NodeId> items_;
  std::vector<double> cumulative_;
};

template <typename V>
void shuffle(std::vector<V>& values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::swap(values[i - 1], values[uniform_index(rng, i)]);
  }
}

std::vector<double> zipf_weights(std::size_t n, double exponent) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = std::pow(static_cast<double>(r + 1), -exponent);
  return w;
}

}  // namespace

Dataset make_citation_like(const CitationLikeSpec& spec) {
  const std::size_t n = spec.num_nodes();
  const std::size_t num_classes = spec.class_sizes.size();
  if (n == 0 || num_classes < 2 || spec.feature_dim < num_classes) {
    throw std::invalid_argument("make_citation_like: degenerate spec");
  }
  Rng rng(spec.seed);

  std::vector<std::uint32_t> labels;
  labels.reserve(n);
  for (std::size_t c = 0; c < num_classes; ++c) labels.insert(labels.end(), spec.class_sizes[c], static_cast<std::uint32_t>(c));
  shuffle(labels, rng);

  // Pareto propensities give a heavy-tailed degree distribution.
  std::vector<double> propensity(n);
  for (auto& w : propensity) {
    const double u = 1.0 - uniform01(rng);
    w = std::min(std::pow(u, -1.0 / (spec.degree_exponent - 1.0)), 60.0);
  }
  std::vector<std::vector<NodeId>> members(num_classes), outsiders(num_classes);
  for (NodeId v = 0; v < n; ++v) {
    for (std::size_t c = 0; c < num_classes; ++c) (labels[v] == c ? members[c] : outsiders[c]).push_back(v);
  }
  std::vector<WeightedPicker> same, other;
  for (std::size_t c = 0; c < num_classes; ++c) {
    same.emplace_back(members[c], propensity);
    other.emplace_back(outsiders[c], propensity);
  }
  std::vector<NodeId> everyone(n);
  std::iota(everyone.begin(), everyone.end(), NodeId{0});
  const WeightedPicker global(everyone, propensity);

  std::set<std::pair<NodeId, NodeId>> links;
  auto partner_of = [&](NodeId u) {
    return uniform01(rng) < spec.homophily ? same[labels[u]].pick(rng) : other[labels[u]].pick(rng);
  };
  auto try_link = [&](NodeId u, NodeId v) {
    if (u == v) return;
    links.emplace(std::min(u, v), std::max(u, v));
  };
  // One link per node first so no node is isolated.
  for (NodeId u = 0; u < n && links.size() < spec.undirected_links; ++u) try_link(u, partner_of(u));
  while (links.size() < spec.undirected_links) {
    const NodeId u = global.pick(rng);
    try_link(u, partner_of(u));
  }
  std::vector<Edge> edges(links.begin(), links.end());

  // Vocabulary: one topic block per class plus a Zipf background over all words.
  std::vector<std::uint32_t> vocab(spec.feature_dim);
  std::iota(vocab.begin(), vocab.end(), 0u);
  shuffle(vocab, rng);
  const std::size_t block = spec.feature_dim / num_classes;
  std::vector<WeightedPicker> topics;
  const auto topic_weights = zipf_weights(block, 1.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<NodeId> words(vocab.begin() + static_cast<std::ptrdiff_t>(c * block),
                              vocab.begin() + static_cast<std::ptrdiff_t>((c + 1) * block));
    std::vector<double> w(spec.feature_dim, 0.0);
    for (std::size_t r = 0; r < block; ++r) w[words[r]] = topic_weights[r];
    topics.emplace_back(words, w);
  }
  std::vector<std::uint32_t> background_order(spec.feature_dim);
  std::iota(background_order.begin(), background_order.end(), 0u);
  shuffle(background_order, rng);
  std::vector<double> background_w(spec.feature_dim);
  const auto bg = zipf_weights(spec.feature_dim, 1.0);
  for (std::size_t r = 0; r < spec.feature_dim; ++r) background_w[background_order[r]] = bg[r];
  const WeightedPicker background(std::vector<NodeId>(background_order.begin(), background_order.end()), background_w);

  Matrix<float> features(n, spec.feature_dim);
  for (NodeId v = 0; v < n; ++v) {
    const std::uint32_t words = std::max<std::uint32_t>(1, poisson(rng, spec.words_per_node));
    for (std::uint32_t i = 0; i < words; ++i) {
      const NodeId w = uniform01(rng) < spec.topic_affinity ? topics[labels[v]].pick(rng) : background.pick(rng);
      features(v, w) = 1.0f;
    }
  }

  // Planetoid-style split: a fixed number of labelled nodes per class, then
  // validation and test drawn from the rest.
  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), NodeId{0});
  shuffle(order, rng);
  std::vector<std::uint8_t> train(n, 0), val(n, 0), test(n, 0);
  std::vector<std::size_t> taken(num_classes, 0);
  std::vector<NodeId> rest;
  for (NodeId v : order) {
    if (taken[labels[v]] < spec.train_per_class) {
      ++taken[labels[v]];
      train[v] = 1;
    } else {
      rest.push_back(v);
    }
  }
  if (rest.size() < spec.num_val + spec.num_test) throw std::invalid_argument("make_citation_like: split too large");
  for (std::size_t i = 0; i < spec.num_val; ++i) val[rest[i]] = 1;
  for (std::size_t i = 0; i < spec.num_test; ++i) test[rest[spec.num_val + i]] = 1;

  Dataset ds;
  ds.graph = build_csr(edges, n, true);
  ds.features = std::move(features);
  ds.labels = std::move(labels);
  ds.train_mask = std::move(train);
  ds.val_mask = std::move(val);
  ds.test_mask = std::move(test);
  ds.num_classes = num_classes;
  ds.validate();
  return ds;
}

}  // namespace sgq
