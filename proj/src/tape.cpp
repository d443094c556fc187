#include "sgq/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace sgq::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch (" + detail + ")");
}

template <typename T>
void add_into(Matrix<T>& dst, const Matrix<T>& src) {
  auto& d = dst.values();
  const auto& s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

template <typename T>
Var Tape<T>::leaf(Matrix<T> value, bool requires_grad) {
  nodes_.push_back(Node{OpKind::kLeaf, {}, std::move(value), {}, requires_grad, {}});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(OpKind kind, std::vector<Var> inputs, Matrix<T> value, BackwardFn backward) {
  Node node{kind, {}, std::move(value), {}, false, {}};
  node.inputs.reserve(inputs.size());
  for (Var v : inputs) {
    if (v.id >= nodes_.size()) throw std::out_of_range("Tape::record: unknown input");
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
Matrix<T> Tape<T>::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Matrix<T>(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
Matrix<T>& Tape<T>::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var root) {
  if (backward_done_) throw std::logic_error("Tape::backward: already run; record a fresh forward pass");
  const Node& r = nodes_.at(root.id);
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw std::invalid_argument("Tape::backward: root must be a scalar, got " + shape_string(r.value));
  }
  backward_done_ = true;
  grad_slot(root.id)(0, 0) = T{1};
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  if (A.cols() != B.rows()) shape_error("matmul", shape_string(A) + " * " + shape_string(B));
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Matrix<T> C(n, m);
  // Row-axpy form; zero entries of A are skipped, which matters for sparse
  // bag-of-words inputs.
  for (std::size_t i = 0; i < n; ++i) {
    T* c = C.data() + i * m;
    const T* arow = A.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      const T* brow = B.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += av * brow[j];
    }
  }
  return tape.record(OpKind::kMatmul, {a, b}, std::move(C), [a, b](Tape<T>& t, std::size_t self) {
    const auto& G = t.upstream(self);
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
    if (t.requires_grad(a)) {
      auto& dA = t.grad_slot(a.id);
      for (std::size_t i = 0; i < n; ++i) {
        const T* g = G.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = B.data() + p * m;
          T acc{0};
          for (std::size_t j = 0; j < m; ++j) acc += g[j] * brow[j];
          dA(i, p) += acc;
        }
      }
    }
    if (t.requires_grad(b)) {
      auto& dB = t.grad_slot(b.id);
      for (std::size_t i = 0; i < n; ++i) {
        const T* g = G.data() + i * m;
        const T* arow = A.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
          const T av = arow[p];
          if (av == T{0}) continue;
          T* d = dB.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) d[j] += av * g[j];
        }
      }
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  if (!A.same_shape(B)) shape_error("add", shape_string(A) + " + " + shape_string(B));
  Matrix<T> C = A;
  add_into(C, B);
  return tape.record(OpKind::kAdd, {a, b}, std::move(C), [a, b](Tape<T>& t, std::size_t self) {
    for (Var v : {a, b}) {
      if (t.requires_grad(v)) add_into(t.grad_slot(v.id), t.upstream(self));
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Matrix<T> C = tape.value(a);
  for (auto& x : C.values()) x *= factor;
  return tape.record(OpKind::kScale, {a}, std::move(C), [a, factor](Tape<T>& t, std::size_t self) {
    auto& d = t.grad_slot(a.id).values();
    const auto& g = t.upstream(self).values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
  });
}

template <typename T>
Var scale_by(Tape<T>& tape, Var s, Var x) {
  const auto& S = tape.value(s);
  if (S.rows() != 1 || S.cols() != 1) shape_error("scale_by", "factor is " + shape_string(S));
  const T factor = S(0, 0);
  Matrix<T> C = tape.value(x);
  for (auto& v : C.values()) v *= factor;
  return tape.record(OpKind::kScaleBy, {s, x}, std::move(C), [s, x](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self).values();
    const auto& xv = t.value(x).values();
    if (t.requires_grad(s)) {
      T acc{0};
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      t.grad_slot(s.id)(0, 0) += acc;
    }
    if (t.requires_grad(x)) {
      const T factor = t.value(s)(0, 0);
      auto& d = t.grad_slot(x.id).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
    }
  });
}

template <typename T>
Var concat_rows(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  if (A.cols() != B.cols()) shape_error("concat_rows", shape_string(A) + " over " + shape_string(B));
  std::vector<T> values = A.values();
  values.insert(values.end(), B.values().begin(), B.values().end());
  Matrix<T> C(A.rows() + B.rows(), A.cols(), std::move(values));
  const std::size_t split = A.size();
  return tape.record(OpKind::kConcatRows, {a, b}, std::move(C), [a, b, split](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self).values();
    if (t.requires_grad(a)) {
      auto& d = t.grad_slot(a.id).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto& d = t.grad_slot(b.id).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[split + i];
    }
  });
}

template <typename T>
Var slice_rows(Tape<T>& tape, Var a, std::size_t begin, std::size_t count) {
  const auto& A = tape.value(a);
  if (begin + count > A.rows()) shape_error("slice_rows", "rows [" + std::to_string(begin) + ", +" +
                                                              std::to_string(count) + ") of " + shape_string(A));
  const std::size_t offset = begin * A.cols();
  std::vector<T> values(A.values().begin() + static_cast<std::ptrdiff_t>(offset),
                        A.values().begin() + static_cast<std::ptrdiff_t>(offset + count * A.cols()));
  Matrix<T> C(count, A.cols(), std::move(values));
  return tape.record(OpKind::kSliceRows, {a}, std::move(C), [a, offset](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self).values();
    auto& d = t.grad_slot(a.id).values();
    for (std::size_t i = 0; i < g.size(); ++i) d[offset + i] += g[i];
  });
}

template <typename T>
Var leaky_relu(Tape<T>& tape, Var a, T slope) {
  if (!std::isfinite(slope)) throw std::invalid_argument("leaky_relu: slope must be finite");
  Matrix<T> C = tape.value(a);
  for (auto& x : C.values()) x = x > T{0} ? x : slope * x;
  return tape.record(OpKind::kLeakyRelu, {a}, std::move(C), [a, slope](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self).values();
    const auto& x = t.value(a).values();
    auto& d = t.grad_slot(a.id).values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += x[i] > T{0} ? g[i] : slope * g[i];
  });
}

template <typename T>
Var exp(Tape<T>& tape, Var a) {
  Matrix<T> C = tape.value(a);
  for (auto& x : C.values()) x = std::exp(x);
  const std::size_t self_id = tape.size();
  return tape.record(OpKind::kExp, {a}, std::move(C), [a, self_id](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self).values();
    const auto& y = t.value(Var{self_id}).values();
    auto& d = t.grad_slot(a.id).values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
  });
}

template <typename T>
Var log_softmax_rows(Tape<T>& tape, Var a) {
  Matrix<T> C = tape.value(a);
  for (std::size_t i = 0; i < C.rows(); ++i) {
    auto row = C.row(i);
    const T mx = *std::max_element(row.begin(), row.end());
    T total{0};
    for (T x : row) total += std::exp(x - mx);
    const T lse = mx + std::log(total);
    for (T& x : row) x -= lse;
  }
  const std::size_t self_id = tape.size();
  return tape.record(OpKind::kLogSoftmaxRows, {a}, std::move(C), [a, self_id](Tape<T>& t, std::size_t self) {
    const auto& G = t.upstream(self);
    const auto& Y = t.value(Var{self_id});
    auto& D = t.grad_slot(a.id);
    for (std::size_t i = 0; i < Y.rows(); ++i) {
      auto g = G.row(i);
      auto y = Y.row(i);
      T gsum{0};
      for (T v : g) gsum += v;
      auto d = D.row(i);
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

template <typename T>
Var nll_loss(Tape<T>& tape, Var log_probs, std::span<const std::uint32_t> labels, std::span<const std::uint8_t> mask) {
  const auto& P = tape.value(log_probs);
  if (labels.size() != P.rows() || mask.size() != P.rows()) {
    shape_error("nll_loss", std::to_string(labels.size()) + " labels / " + std::to_string(mask.size()) +
                                " mask entries for " + shape_string(P));
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0) continue;
    if (labels[i] >= P.cols()) throw std::invalid_argument("nll_loss: label out of range at row " + std::to_string(i));
    rows.push_back(i);
  }
  if (rows.empty()) throw std::invalid_argument("nll_loss: no supervised nodes");
  T total{0};
  for (std::size_t i : rows) total -= P(i, labels[i]);
  const T inv = T{1} / static_cast<T>(rows.size());
  Matrix<T> L(1, 1, total * inv);
  std::vector<std::uint32_t> picked;
  picked.reserve(rows.size());
  for (std::size_t i : rows) picked.push_back(labels[i]);
  return tape.record(OpKind::kNllLoss, {log_probs}, std::move(L),
                     [log_probs, rows = std::move(rows), picked = std::move(picked), inv](Tape<T>& t, std::size_t self) {
                       const T g = t.upstream(self)(0, 0);
                       auto& D = t.grad_slot(log_probs.id);
                       for (std::size_t r = 0; r < rows.size(); ++r) D(rows[r], picked[r]) -= g * inv;
                     });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  T total{0};
  for (T x : tape.value(a).values()) total += x;
  return tape.record(OpKind::kSum, {a}, Matrix<T>(1, 1, total), [a](Tape<T>& t, std::size_t self) {
    const T g = t.upstream(self)(0, 0);
    for (auto& d : t.grad_slot(a.id).values()) d += g;
  });
}

#define SGQ_INSTANTIATE_TAPE(T)                                                                                \
  template class Tape<T>;                                                                                      \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                                  \
  template Var add<T>(Tape<T>&, Var, Var);                                                                     \
  template Var scale<T>(Tape<T>&, Var, T);                                                                     \
  template Var scale_by<T>(Tape<T>&, Var, Var);                                                                \
  template Var concat_rows<T>(Tape<T>&, Var, Var);                                                             \
  template Var slice_rows<T>(Tape<T>&, Var, std::size_t, std::size_t);                                         \
  template Var leaky_relu<T>(Tape<T>&, Var, T);                                                                \
  template Var exp<T>(Tape<T>&, Var);                                                                          \
  template Var log_softmax_rows<T>(Tape<T>&, Var);                                                             \
  template Var nll_loss<T>(Tape<T>&, Var, std::span<const std::uint32_t>, std::span<const std::uint8_t>);      \
  template Var sum<T>(Tape<T>&, Var);

SGQ_INSTANTIATE_TAPE(float)
SGQ_INSTANTIATE_TAPE(double)

}  // namespace sgq::ad
