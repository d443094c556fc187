#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgq/graph.hpp"

namespace sgq {

/// Shape and statistics of a citation-style benchmark, used to generate a
/// seeded stand-in when the published data is not available locally.
///
/// The generator is a degree-corrected stochastic block model: nodes get a
/// heavy-tailed propensity, each undirected link joins two nodes of the same
/// class with probability `homophily`, and every node carries a binary
/// bag-of-words vector in which each drawn word comes from its class topic
/// with probability `topic_affinity` (else from a shared background).
struct CitationLikeSpec {
  std::string name;
  std::size_t feature_dim = 0;
  std::vector<std::size_t> class_sizes;
  std::size_t undirected_links = 0;
  double homophily = 0.8;
  double degree_exponent = 2.5;
  double words_per_node = 18.0;
  double topic_affinity = 0.3;
  std::size_t train_per_class = 20;
  std::size_t num_val = 500;
  std::size_t num_test = 1000;
  std::uint64_t seed = 0;

  std::size_t num_nodes() const;
};

/// Cora-shaped: 2708 nodes, 1433 words, 7 classes, 5429 raw links.
CitationLikeSpec cora_like(std::uint64_t seed = 2708);
/// Citeseer-shaped: 3327 nodes, 3703 words, 6 classes, 4732 raw links.
CitationLikeSpec citeseer_like(std::uint64_t seed = 3327);

Dataset make_citation_like(const CitationLikeSpec& spec);

}  // namespace sgq
