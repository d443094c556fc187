#include "sgq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sgq {

QuantParams QuantParams::make(int bits, double alpha_min, double alpha_max) {
  if (bits < kMinBits || bits > kMaxBits) {
    throw std::invalid_argument("QuantParams: bits " + std::to_string(bits) + " outside [1,16]");
  }
  if (!std::isfinite(alpha_min) || !std::isfinite(alpha_max) || !(alpha_max > alpha_min)) {
    throw std::invalid_argument("QuantParams: need finite alpha_max > alpha_min");
  }
  QuantParams p;
  p.bits = bits;
  p.alpha_min = alpha_min;
  p.alpha_max = alpha_max;
  p.scale = (alpha_max - alpha_min) / std::ldexp(1.0, bits);
  return p;
}

namespace {

template <typename V>
QuantParams calibrate_impl(std::span<const V> values, int bits) {
  if (values.empty()) throw std::invalid_argument("calibrate: empty collection");
  if (bits < kMinBits || bits > kMaxBits) {
    throw std::invalid_argument("calibrate: bits " + std::to_string(bits) + " outside [1,16]");
  }
  double lo = values[0], hi = values[0];
  for (V v : values) {
    if (!std::isfinite(static_cast<double>(v))) throw std::invalid_argument("calibrate: non-finite value");
    lo = std::min<double>(lo, v);
    hi = std::max<double>(hi, v);
  }
  if (hi == lo) hi = lo + 1e-6;
  return QuantParams::make(bits, lo, hi);
}

}  // namespace

QuantParams calibrate(std::span<const double> values, int bits) { return calibrate_impl(values, bits); }
QuantParams calibrate(std::span<const float> values, int bits) { return calibrate_impl(values, bits); }

std::uint32_t quantize(double x, const QuantParams& p) {
  const double raw = std::floor((x - p.alpha_min) / p.scale);
  if (!(raw > 0.0)) return 0;  // also maps NaN to level 0
  const double top = static_cast<double>(p.max_level());
  return raw >= top ? p.max_level() : static_cast<std::uint32_t>(raw);
}

double dequantize(std::uint32_t level, const QuantParams& p) {
  if (level > p.max_level()) {
    throw std::out_of_range("dequantize: level " + std::to_string(level) + " exceeds " + std::to_string(p.max_level()));
  }
  return p.scale * static_cast<double>(level) + p.alpha_min;
}

double fake_quantize_value(double x, const QuantParams& p) { return dequantize(quantize(x, p), p); }

namespace ad {

namespace {

template <typename T>
void pass_through(Tape<T>& t, std::size_t self, Var x) {
  auto& d = t.grad_slot(x.id).values();
  const auto& g = t.upstream(self).values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
}

}  // namespace

template <typename T>
Var fake_quantize(Tape<T>& tape, Var x, const QuantParams& p) {
  Matrix<T> out = tape.value(x);
  for (auto& v : out.values()) v = static_cast<T>(fake_quantize_value(static_cast<double>(v), p));
  return tape.record(OpKind::kFakeQuantize, {x}, std::move(out),
                     [x](Tape<T>& t, std::size_t self) { pass_through(t, self, x); });
}

template <typename T>
Var fake_quantize_rows(Tape<T>& tape, Var x, std::span<const int> group, std::span<const QuantParams> params) {
  Matrix<T> out = tape.value(x);
  if (group.size() != out.rows()) {
    throw std::invalid_argument("fake_quantize_rows: " + std::to_string(group.size()) + " groups for " +
                                std::to_string(out.rows()) + " rows");
  }
  for (std::size_t i = 0; i < out.rows(); ++i) {
    if (group[i] < 0) continue;
    const QuantParams& p = params[static_cast<std::size_t>(group[i])];
    for (auto& v : out.row(i)) v = static_cast<T>(fake_quantize_value(static_cast<double>(v), p));
  }
  return tape.record(OpKind::kFakeQuantize, {x}, std::move(out),
                     [x](Tape<T>& t, std::size_t self) { pass_through(t, self, x); });
}

template Var fake_quantize<float>(Tape<float>&, Var, const QuantParams&);
template Var fake_quantize<double>(Tape<double>&, Var, const QuantParams&);
template Var fake_quantize_rows<float>(Tape<float>&, Var, std::span<const int>, std::span<const QuantParams>);
template Var fake_quantize_rows<double>(Tape<double>&, Var, std::span<const int>, std::span<const QuantParams>);

}  // namespace ad
}  // namespace sgq
