#include "sgq/quant_config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "sgq/graph.hpp"

namespace sgq {

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::kUniform: return "uniform";
    case Granularity::kLwq: return "lwq";
    case Granularity::kCwq: return "cwq";
    case Granularity::kLwqCwq: return "lwq_cwq";
    case Granularity::kLwqCwqTaq: return "lwq_cwq_taq";
  }
  return "?";
}

Granularity parse_granularity(std::string_view text) {
  for (auto g : {Granularity::kUniform, Granularity::kLwq, Granularity::kCwq, Granularity::kLwqCwq,
                 Granularity::kLwqCwqTaq}) {
    if (to_string(g) == text) return g;
  }
  throw std::invalid_argument("unknown granularity '" + std::string(text) + "'");
}

std::string_view to_string(Component c) { return c == Component::kAttention ? "att" : "com"; }

bool layer_aware(Granularity g) { return g == Granularity::kLwq || g == Granularity::kLwqCwq || g == Granularity::kLwqCwqTaq; }
bool component_aware(Granularity g) { return g == Granularity::kCwq || g == Granularity::kLwqCwq || g == Granularity::kLwqCwqTaq; }
bool topology_aware(Granularity g) { return g == Granularity::kLwqCwqTaq; }

DegreeBuckets::DegreeBuckets(std::array<std::uint32_t, 3> split_points) : split_points_(split_points) {
  if (!(0 < split_points[0] && split_points[0] < split_points[1] && split_points[1] < split_points[2])) {
    throw std::invalid_argument("DegreeBuckets: split points must satisfy 0 < D1 < D2 < D3");
  }
}

DegreeBuckets DegreeBuckets::from_quartiles(std::span<const std::uint32_t> degrees) {
  if (degrees.empty()) return DegreeBuckets({1, 2, 3});
  std::vector<std::uint32_t> sorted(degrees.begin(), degrees.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return static_cast<double>(sorted[lo]) * (1.0 - frac) + static_cast<double>(sorted[hi]) * frac;
  };
  std::array<std::uint32_t, 3> sp{};
  std::uint32_t floor_value = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto q = static_cast<std::uint32_t>(std::ceil(quantile(0.25 * static_cast<double>(i + 1))));
    sp[i] = std::max(q, floor_value);
    floor_value = sp[i] + 1;
  }
  return DegreeBuckets(sp);
}

std::size_t DegreeBuckets::bucket_of(std::uint32_t degree) const {
  std::size_t j = 0;
  while (j < 3 && degree >= split_points_[j]) ++j;
  return j;
}

int fbit(std::uint32_t degree, const DegreeBuckets& buckets, std::span<const int> bucket_bits) {
  if (bucket_bits.size() != kNumBuckets) throw std::invalid_argument("fbit: template must have 4 entries");
  for (std::size_t j = 1; j < kNumBuckets; ++j) {
    if (bucket_bits[j] > bucket_bits[j - 1]) throw std::invalid_argument("fbit: template must be non-increasing");
  }
  return bucket_bits[buckets.bucket_of(degree)];
}

std::size_t slot_count(Granularity g, std::size_t depth) {
  switch (g) {
    case Granularity::kUniform: return 1;
    case Granularity::kLwq: return depth;
    case Granularity::kCwq: return 2;
    case Granularity::kLwqCwq: return 2 * depth;
    case Granularity::kLwqCwqTaq: return (1 + kNumBuckets) * depth;
  }
  return 0;
}

namespace {

bool valid_bit_width(int b) { return (b >= 1 && b <= 16) || b == kFullPrecisionBits; }

std::vector<int> normalized_template(std::vector<int> bits_template) {
  if (bits_template.empty()) throw std::invalid_argument("QuantConfig: empty bit template");
  for (int b : bits_template) {
    if (!valid_bit_width(b)) throw std::invalid_argument("QuantConfig: template bit " + std::to_string(b) + " invalid");
  }
  std::sort(bits_template.begin(), bits_template.end());
  bits_template.erase(std::unique(bits_template.begin(), bits_template.end()), bits_template.end());
  return bits_template;
}

}  // namespace

QuantConfig QuantConfig::from_slots(Granularity g, std::size_t depth, std::vector<int> slots,
                                    std::vector<int> bits_template, std::optional<DegreeBuckets> buckets) {
  QuantConfig cfg;
  cfg.granularity_ = g;
  cfg.depth_ = layer_aware(g) ? depth : 0;
  if (layer_aware(g) && depth == 0) throw std::invalid_argument("QuantConfig: layer-wise config needs depth >= 1");
  cfg.template_ = normalized_template(std::move(bits_template));
  if (slots.size() != slot_count(g, cfg.depth_)) {
    throw std::invalid_argument("QuantConfig: " + std::string(to_string(g)) + " expects " +
                                std::to_string(slot_count(g, cfg.depth_)) + " slots, got " + std::to_string(slots.size()));
  }
  for (int b : slots) {
    if (!std::binary_search(cfg.template_.begin(), cfg.template_.end(), b)) {
      throw std::invalid_argument("QuantConfig: bits " + std::to_string(b) + " not in template");
    }
  }
  if (topology_aware(g)) {
    if (!buckets) throw std::invalid_argument("QuantConfig: topology-aware config needs degree buckets");
    for (std::size_t k = 0; k < cfg.depth_; ++k) {
      for (std::size_t j = 1; j < kNumBuckets; ++j) {
        if (slots[k * 5 + 1 + j] > slots[k * 5 + j]) {
          throw std::invalid_argument("QuantConfig: bucket bits of layer " + std::to_string(k) + " must be non-increasing");
        }
      }
    }
    cfg.buckets_ = buckets;
  } else if (buckets) {
    throw std::invalid_argument("QuantConfig: degree buckets only apply to lwq_cwq_taq");
  }
  cfg.slots_ = std::move(slots);
  return cfg;
}

QuantConfig QuantConfig::uniform(int bits, std::vector<int> bits_template) {
  return from_slots(Granularity::kUniform, 0, {bits}, std::move(bits_template));
}

QuantConfig QuantConfig::full_precision() { return uniform(kFullPrecisionBits, {kFullPrecisionBits}); }

QuantConfig QuantConfig::layer_wise(std::vector<int> per_layer, std::vector<int> bits_template) {
  const std::size_t depth = per_layer.size();
  return from_slots(Granularity::kLwq, depth, std::move(per_layer), std::move(bits_template));
}

QuantConfig QuantConfig::component_wise(int att, int com, std::vector<int> bits_template) {
  return from_slots(Granularity::kCwq, 0, {att, com}, std::move(bits_template));
}

QuantConfig QuantConfig::layer_component(std::span<const std::array<int, 2>> per_layer, std::vector<int> bits_template) {
  std::vector<int> slots;
  for (const auto& [att, com] : per_layer) {
    slots.push_back(att);
    slots.push_back(com);
  }
  return from_slots(Granularity::kLwqCwq, per_layer.size(), std::move(slots), std::move(bits_template));
}

QuantConfig QuantConfig::layer_component_topology(std::span<const int> att_per_layer,
                                                  std::span<const std::array<int, 4>> com_buckets_per_layer,
                                                  DegreeBuckets buckets, std::vector<int> bits_template) {
  if (att_per_layer.size() != com_buckets_per_layer.size()) {
    throw std::invalid_argument("QuantConfig: attention and combination layer counts differ");
  }
  std::vector<int> slots;
  for (std::size_t k = 0; k < att_per_layer.size(); ++k) {
    slots.push_back(att_per_layer[k]);
    slots.insert(slots.end(), com_buckets_per_layer[k].begin(), com_buckets_per_layer[k].end());
  }
  return from_slots(Granularity::kLwqCwqTaq, att_per_layer.size(), std::move(slots), std::move(bits_template), buckets);
}

std::size_t QuantConfig::layer_stride() const {
  switch (granularity_) {
    case Granularity::kLwq: return 1;
    case Granularity::kLwqCwq: return 2;
    case Granularity::kLwqCwqTaq: return 1 + kNumBuckets;
    default: return 0;
  }
}

int QuantConfig::bits_for(std::size_t layer, Component component, std::uint32_t degree) const {
  if (layer_aware(granularity_) && layer >= depth_) {
    throw std::out_of_range("bits_for: layer " + std::to_string(layer) + " outside config depth " + std::to_string(depth_));
  }
  const bool att = component == Component::kAttention;
  switch (granularity_) {
    case Granularity::kUniform: return slots_[0];
    case Granularity::kLwq: return slots_[layer];
    case Granularity::kCwq: return att ? slots_[0] : slots_[1];
    case Granularity::kLwqCwq: return slots_[2 * layer + (att ? 0 : 1)];
    case Granularity::kLwqCwqTaq: {
      const std::size_t base = layer * layer_stride();
      if (att) return slots_[base];
      return fbit(degree, *buckets_, std::span<const int>(slots_.data() + base + 1, kNumBuckets));
    }
  }
  return slots_[0];
}

std::array<int, 4> QuantConfig::bucket_bits(std::size_t layer) const {
  if (!topology_aware(granularity_)) throw std::logic_error("bucket_bits: config is not topology-aware");
  if (layer >= depth_) throw std::out_of_range("bucket_bits: layer out of range");
  std::array<int, 4> out{};
  std::copy_n(slots_.begin() + static_cast<std::ptrdiff_t>(layer * layer_stride() + 1), kNumBuckets, out.begin());
  return out;
}

std::string QuantConfig::id() const {
  std::ostringstream out;
  out << to_string(granularity_) << ':';
  for (std::size_t i = 0; i < slots_.size(); ++i) out << (i ? "-" : "") << slots_[i];
  if (buckets_) {
    const auto& sp = buckets_->split_points();
    out << '@' << sp[0] << ',' << sp[1] << ',' << sp[2];
  }
  return out.str();
}

std::vector<double> encode_features(const QuantConfig& cfg) {
  return {cfg.slots().begin(), cfg.slots().end()};
}

namespace {

std::string slot_key(Granularity g, std::size_t slot) {
  auto key = [](const std::string& k, std::string_view c, const std::string& b) {
    return k + "/" + std::string(c) + "/" + b;
  };
  switch (g) {
    case Granularity::kUniform: return key("*", "*", "*");
    case Granularity::kLwq: return key(std::to_string(slot), "*", "*");
    case Granularity::kCwq: return key("*", slot == 0 ? "att" : "com", "*");
    case Granularity::kLwqCwq: return key(std::to_string(slot / 2), slot % 2 == 0 ? "att" : "com", "*");
    case Granularity::kLwqCwqTaq: {
      const std::size_t k = slot / 5, r = slot % 5;
      return r == 0 ? key(std::to_string(k), "att", "*") : key(std::to_string(k), "com", std::to_string(r - 1));
    }
  }
  return "";
}

/// Inverse of slot_key given a depth; nullopt when the key is not a slot of g.
std::optional<std::size_t> slot_index(Granularity g, std::size_t depth, const std::string& key) {
  for (std::size_t s = 0; s < slot_count(g, depth); ++s) {
    if (slot_key(g, s) == key) return s;
  }
  return std::nullopt;
}

std::size_t depth_from_keys(Granularity g, const nlohmann::json& bits) {
  if (!layer_aware(g)) return 0;
  std::size_t depth = 0;
  for (auto it = bits.begin(); it != bits.end(); ++it) {
    const std::string& key = it.key();
    const auto slash = key.find('/');
    const std::string layer = key.substr(0, slash);
    if (layer.empty() || !std::all_of(layer.begin(), layer.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
        layer.size() > 6) {
      throw FormatError("config: bad layer in bits key '" + key + "'");
    }
    depth = std::max<std::size_t>(depth, std::stoul(layer) + 1);
  }
  return depth;
}

int json_int(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number_integer()) throw FormatError("config: " + what + " must be an integer");
  return v.get<int>();
}

}  // namespace

std::string serialize_config(const QuantConfig& cfg) {
  nlohmann::ordered_json doc;
  doc["granularity"] = std::string(to_string(cfg.granularity()));
  doc["template"] = cfg.bits_template();
  if (cfg.buckets()) {
    const auto& sp = cfg.buckets()->split_points();
    doc["split_points"] = std::vector<std::uint32_t>(sp.begin(), sp.end());
  }
  nlohmann::ordered_json bits = nlohmann::ordered_json::object();
  for (std::size_t s = 0; s < cfg.slots().size(); ++s) bits[slot_key(cfg.granularity(), s)] = cfg.slots()[s];
  doc["bits"] = std::move(bits);
  return doc.dump(2) + "\n";
}

QuantConfig parse_config(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("config: top level must be an object");
  static const std::set<std::string> known = {"granularity", "template", "split_points", "bits"};
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!known.count(it.key())) throw FormatError("config: unknown key '" + it.key() + "'");
  }
  for (const char* required : {"granularity", "template", "bits"}) {
    if (!doc.contains(required)) throw FormatError(std::string("config: missing key '") + required + "'");
  }
  if (!doc["granularity"].is_string()) throw FormatError("config: granularity must be a string");
  Granularity g;
  try {
    g = parse_granularity(doc["granularity"].get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  if (!doc["template"].is_array()) throw FormatError("config: template must be an array");
  std::vector<int> bits_template;
  for (const auto& v : doc["template"]) {
    const int b = json_int(v, "template entry");
    if (!valid_bit_width(b)) throw FormatError("config: template bit " + std::to_string(b) + " invalid");
    bits_template.push_back(b);
  }
  if (bits_template.empty()) throw FormatError("config: empty template");

  std::optional<DegreeBuckets> buckets;
  if (doc.contains("split_points")) {
    if (!topology_aware(g)) throw FormatError("config: split_points only valid with lwq_cwq_taq");
    const auto& sp = doc["split_points"];
    if (!sp.is_array() || sp.size() != 3) throw FormatError("config: split_points must hold 3 integers");
    std::array<std::uint32_t, 3> points{};
    for (std::size_t i = 0; i < 3; ++i) {
      const int p = json_int(sp[i], "split point");
      if (p <= 0) throw FormatError("config: split points must be positive");
      points[i] = static_cast<std::uint32_t>(p);
    }
    try {
      buckets = DegreeBuckets(points);
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("config: ") + e.what());
    }
  } else if (topology_aware(g)) {
    throw FormatError("config: lwq_cwq_taq requires split_points");
  }

  const auto& bits = doc["bits"];
  if (!bits.is_object()) throw FormatError("config: bits must be an object");
  const std::size_t depth = depth_from_keys(g, bits);
  if (layer_aware(g) && depth == 0) throw FormatError("config: no bit slots");
  std::vector<int> slots(slot_count(g, depth), 0);
  std::vector<bool> seen(slots.size(), false);
  for (auto it = bits.begin(); it != bits.end(); ++it) {
    const auto idx = slot_index(g, depth, it.key());
    if (!idx) throw FormatError("config: key '" + it.key() + "' is not a slot of " + std::string(to_string(g)));
    slots[*idx] = json_int(it.value(), "bits '" + it.key() + "'");
    seen[*idx] = true;
  }
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (!seen[s]) throw FormatError("config: missing bits for '" + slot_key(g, s) + "'");
    if (std::find(bits_template.begin(), bits_template.end(), slots[s]) == bits_template.end()) {
      throw FormatError("config: bits " + std::to_string(slots[s]) + " at '" + slot_key(g, s) + "' not in template");
    }
  }
  try {
    return QuantConfig::from_slots(g, depth, std::move(slots), std::move(bits_template), buckets);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
}

QuantConfig load_config(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw FormatError("file not found: " + path.string());
  std::stringstream buffer;
  buffer << file.rdbuf();
  return parse_config(buffer.str());
}

void save_config(const QuantConfig& cfg, const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw FormatError("cannot write " + path.string());
  file << serialize_config(cfg);
}

namespace {

std::size_t saturating_mul(std::size_t a, std::size_t b) {
  if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) return std::numeric_limits<std::size_t>::max();
  return a * b;
}

/// Non-increasing 4-tuples over the choices, as choice values.
std::vector<std::array<int, 4>> bucket_tuples(const std::vector<int>& choices) {
  std::vector<int> desc(choices);
  std::sort(desc.rbegin(), desc.rend());
  std::vector<std::array<int, 4>> out;
  const std::size_t c = desc.size();
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = a; b < c; ++b)
      for (std::size_t d = b; d < c; ++d)
        for (std::size_t e = d; e < c; ++e) out.push_back({desc[a], desc[b], desc[d], desc[e]});
  return out;
}

std::vector<int> sorted_choices(const SearchSpace& space) {
  std::vector<int> choices = space.bit_choices;
  std::sort(choices.begin(), choices.end());
  choices.erase(std::unique(choices.begin(), choices.end()), choices.end());
  if (choices.empty()) throw std::invalid_argument("SearchSpace: no bit choices");
  return choices;
}

}  // namespace

std::size_t SearchSpace::size() const {
  const std::size_t c = sorted_choices(*this).size();
  std::size_t per_block = c;
  std::size_t blocks = num_slots();
  if (topology_aware(granularity)) {
    // att choice times multisets of size 4: C(c+3, 4).
    per_block = c * ((c + 3) * (c + 2) * (c + 1) * c / 24);
    blocks = depth;
  }
  std::size_t total = 1;
  for (std::size_t i = 0; i < blocks; ++i) total = saturating_mul(total, per_block);
  return total;
}

QuantConfig random_config(const SearchSpace& space, Rng& rng) {
  const auto choices = sorted_choices(space);
  auto draw = [&] { return choices[uniform_index(rng, choices.size())]; };
  std::vector<int> slots(space.num_slots());
  if (topology_aware(space.granularity)) {
    for (std::size_t k = 0; k < space.depth; ++k) {
      slots[k * 5] = draw();
      for (std::size_t j = 0; j < kNumBuckets; ++j) slots[k * 5 + 1 + j] = draw();
      std::sort(slots.begin() + static_cast<std::ptrdiff_t>(k * 5 + 1), slots.begin() + static_cast<std::ptrdiff_t>(k * 5 + 5),
                std::greater<>());
    }
  } else {
    for (auto& s : slots) s = draw();
  }
  return QuantConfig::from_slots(space.granularity, space.depth, std::move(slots), choices, space.buckets);
}

QuantConfig random_config(const SearchSpace& space, std::uint64_t seed) {
  Rng rng(seed);
  return random_config(space, rng);
}

std::vector<QuantConfig> enumerate_space(const SearchSpace& space, std::size_t limit) {
  const std::size_t total = space.size();
  if (total > limit) throw std::invalid_argument("enumerate_space: " + std::to_string(total) + " configs exceed limit");
  const auto choices = sorted_choices(space);

  // Each block is a run of slots enumerated together.
  std::vector<std::vector<std::vector<int>>> blocks;
  if (topology_aware(space.granularity)) {
    const auto tuples = bucket_tuples(choices);
    std::vector<std::vector<int>> options;
    for (int att : choices) {
      for (const auto& t : tuples) options.push_back({att, t[0], t[1], t[2], t[3]});
    }
    blocks.assign(space.depth, options);
  } else {
    std::vector<std::vector<int>> options;
    for (int b : choices) options.push_back({b});
    blocks.assign(space.num_slots(), options);
  }

  std::vector<QuantConfig> out;
  out.reserve(total);
  std::vector<std::size_t> odometer(blocks.size(), 0);
  while (true) {
    std::vector<int> slots;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& opt = blocks[i][odometer[i]];
      slots.insert(slots.end(), opt.begin(), opt.end());
    }
    out.push_back(QuantConfig::from_slots(space.granularity, space.depth, std::move(slots), choices, space.buckets));
    std::size_t i = blocks.size();
    while (i > 0) {
      --i;
      if (++odometer[i] < blocks[i].size()) break;
      odometer[i] = 0;
      if (i == 0) return out;
    }
    if (blocks.empty()) return out;
  }
}

std::vector<ElementGroup> element_groups(const QuantConfig& cfg, const FeatureLayout& layout, AttentionAccounting mode) {
  if (layer_aware(cfg.granularity()) && cfg.depth() != layout.depth()) {
    throw std::invalid_argument("element_groups: config depth " + std::to_string(cfg.depth()) + " != model depth " +
                                std::to_string(layout.depth()));
  }
  const std::uint64_t n = layout.num_nodes();
  std::array<std::uint64_t, kNumBuckets> bucket_nodes{};
  if (cfg.buckets()) {
    for (auto d : layout.degrees) ++bucket_nodes[cfg.buckets()->bucket_of(d)];
  }
  std::vector<ElementGroup> groups;
  for (std::size_t k = 0; k < layout.depth(); ++k) {
    const std::uint64_t dim = layout.embedding_dims[k];
    if (cfg.buckets()) {
      const auto bits = cfg.bucket_bits(k);
      for (std::size_t j = 0; j < kNumBuckets; ++j) {
        if (bucket_nodes[j] == 0) continue;
        groups.push_back({k, Component::kCombination, static_cast<int>(j), bits[j], bucket_nodes[j] * dim});
      }
    } else {
      groups.push_back({k, Component::kCombination, -1, cfg.bits_for(k, Component::kCombination, 0), n * dim});
    }
    if (layout.stores_attention) {
      const std::uint64_t count = mode == AttentionAccounting::kSparseEdges ? layout.attention_edges : n * n;
      groups.push_back({k, Component::kAttention, -1, cfg.bits_for(k, Component::kAttention, 0), count});
    }
  }
  return groups;
}

double average_bits(const QuantConfig& cfg, const FeatureLayout& layout) {
  std::uint64_t weighted = 0, total = 0;
  for (const auto& g : element_groups(cfg, layout)) {
    weighted += static_cast<std::uint64_t>(g.bits) * g.elements;
    total += g.elements;
  }
  return total == 0 ? 0.0 : static_cast<double>(weighted) / static_cast<double>(total);
}

}  // namespace sgq
