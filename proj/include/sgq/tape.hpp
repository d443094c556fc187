#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "sgq/matrix.hpp"

namespace sgq::ad {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatmul,
  kAdd,
  kScale,
  kScaleBy,
  kConcatRows,
  kSliceRows,
  kLeakyRelu,
  kExp,
  kLogSoftmaxRows,
  kNllLoss,
  kSum,
  kFakeQuantize,
  kGatherWeightedSum,
  kEdgePairSum,
  kEdgeSoftmax,
  kEdgeCosine,
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
/// index order is a topological order and backward is a single reverse sweep.
///
/// A tape supports exactly one backward pass; a second call throws
/// std::logic_error.
template <typename T>
class Tape {
 public:
  /// Propagates the gradient held by node `self` into its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Matrix<T> value;
    Matrix<T> grad;  // empty until something flows into it
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var constant(Matrix<T> value) { return leaf(std::move(value), false); }
  Var parameter(Matrix<T> value) { return leaf(std::move(value), true); }
  Var leaf(Matrix<T> value, bool requires_grad);

  /// Records an op result. The node requires grad iff any input does; the
  /// backward function is dropped otherwise.
  Var record(OpKind kind, std::vector<Var> inputs, Matrix<T> value, BackwardFn backward);

  const Matrix<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward root w.r.t. `v`; zeros when no path exists.
  Matrix<T> grad(Var v) const;

  /// Accumulation target for op implementations; allocated on first use.
  Matrix<T>& grad_slot(std::size_t id);
  const Matrix<T>& upstream(std::size_t id) const { return nodes_[id].grad; }
  const Node& node(std::size_t id) const { return nodes_[id]; }

  void backward(Var root);

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Differentiable ops. All throw std::invalid_argument on shape mismatch.

template <typename T> Var matmul(Tape<T>& tape, Var a, Var b);
template <typename T> Var add(Tape<T>& tape, Var a, Var b);
template <typename T> Var scale(Tape<T>& tape, Var a, T factor);
/// Multiplies every element of `x` by the 1x1 value `s`.
template <typename T> Var scale_by(Tape<T>& tape, Var s, Var x);
/// Stacks `a` on top of `b`.
template <typename T> Var concat_rows(Tape<T>& tape, Var a, Var b);
template <typename T> Var slice_rows(Tape<T>& tape, Var a, std::size_t begin, std::size_t count);
template <typename T> Var leaky_relu(Tape<T>& tape, Var a, T slope);
template <typename T> Var relu(Tape<T>& tape, Var a) { return leaky_relu(tape, a, T{0}); }
template <typename T> Var exp(Tape<T>& tape, Var a);
template <typename T> Var log_softmax_rows(Tape<T>& tape, Var a);
/// Mean of -log_probs[i, labels[i]] over rows with mask[i] != 0.
template <typename T>
Var nll_loss(Tape<T>& tape, Var log_probs, std::span<const std::uint32_t> labels, std::span<const std::uint8_t> mask);
template <typename T> Var sum(Tape<T>& tape, Var a);

}  // namespace sgq::ad
