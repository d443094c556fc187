#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sgq/tape.hpp"

namespace sgq {

constexpr int kMinBits = 1;
constexpr int kMaxBits = 16;

/// Affine quantization parameters for one tensor group.
///
/// Levels are integers in [0, 2^bits - 1]; scale = (alpha_max - alpha_min) / 2^bits.
struct QuantParams {
  int bits = 8;
  double alpha_min = 0.0;
  double alpha_max = 1.0;
  double scale = 1.0 / 256.0;

  /// Validates the invariants and computes scale.
  static QuantParams make(int bits, double alpha_min, double alpha_max);

  std::uint32_t max_level() const { return (std::uint32_t{1} << bits) - 1; }
  bool operator==(const QuantParams&) const = default;
};

/// Exact min/max of `values`. A zero range is widened to 1e-6 so scale > 0.
QuantParams calibrate(std::span<const double> values, int bits);
QuantParams calibrate(std::span<const float> values, int bits);

/// clamp(floor((x - alpha_min) / scale), 0, 2^bits - 1). Saturating.
std::uint32_t quantize(double x, const QuantParams& p);

/// scale * level + alpha_min. Throws std::out_of_range for levels above 2^bits - 1.
double dequantize(std::uint32_t level, const QuantParams& p);

/// dequantize(quantize(x)).
double fake_quantize_value(double x, const QuantParams& p);

namespace ad {

/// Quantize-dequantize every element with one parameter set. The backward
/// pass is the identity (straight-through), saturated inputs included.
template <typename T>
Var fake_quantize(Tape<T>& tape, Var x, const QuantParams& p);

/// Row-grouped variant: row i uses params[group[i]]. A negative group leaves
/// the row untouched (full precision).
template <typename T>
Var fake_quantize_rows(Tape<T>& tape, Var x, std::span<const int> group, std::span<const QuantParams> params);

}  // namespace ad
}  // namespace sgq
