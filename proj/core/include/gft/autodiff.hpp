#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "gft/tensor.hpp"

namespace gft::ad {

template <class T>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
/// lives.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const BasicTensor<T>& value() const;
  /// Gradient accumulated by the last backward pass (zeros if none reached it).
  const BasicTensor<T>& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape<T>* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Linear record of operations. Node ids increase in creation order, so the
/// id order is a topological order of the graph.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(BasicTensor<T> value, bool requires_grad = true);
  Var<T> constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

  /// Records an op result. `fn` must add into the grads of `parents`.
  Var<T> record(BasicTensor<T> value, std::vector<std::size_t> parents, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every ancestor of `loss`.
  /// Visits each reachable node once, in reverse creation order.
  void backward(Var<T> loss);

  const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const BasicTensor<T>& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Adds `g` into the gradient of node `id` (no-op for constants).
  void accumulate(std::size_t id, const BasicTensor<T>& g);
  /// Mutable gradient buffer, allocated on first use. Only valid for nodes
  /// that require grad.
  BasicTensor<T>& grad_buffer(std::size_t id);

  const BasicTensor<T>& upstream(std::size_t self) const { return nodes_[self].grad; }

  std::size_t size() const { return nodes_.size(); }
  /// Backward rules run by the last backward() call. Leaves have no rule and
  /// are not counted.
  std::size_t backward_visits() const { return visits_; }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

template <class T>
const BasicTensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <class T>
const BasicTensor<T>& Var<T>::grad() const {
  return tape_->grad(id_);
}

// ---- differentiable operations ----

template <class T>
Var<T> add(Var<T> a, Var<T> b);
template <class T>
Var<T> mul(Var<T> a, Var<T> b);
template <class T>
Var<T> scale(Var<T> a, double s);
/// Sum of all elements, shape [1].
template <class T>
Var<T> sum(Var<T> a);
template <class T>
Var<T> reshape(Var<T> a, Shape shape);

/// 2-D matrix product.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b);

/// x[..., in] · W[in, out] + b[out]
template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps);

template <class T>
Var<T> gelu(Var<T> x);

template <class T>
struct AttentionOutput {
  Var<T> out;                 ///< [B, T, D] concatenated head outputs
  BasicTensor<T> scores;      ///< [B, H, T, T] scaled QKᵀ before softmax
  BasicTensor<T> probs;       ///< [B, H, T, T] softmax of scores
};

/// Multi-head scaled dot-product attention over a fused projection
/// qkv[B, T, 3D] laid out as [q | k | v], each split into `heads` slices.
/// Scores and probabilities are returned as plain tensors: they carry no
/// gradient path of their own.
template <class T>
AttentionOutput<T> attention(Var<T> qkv, std::size_t heads);

/// [B, N, D] patches and a [D] class token -> [B, N+1, D], class token first.
template <class T>
Var<T> prepend_token(Var<T> patches, Var<T> token);

/// x[B, T, D] + table[T, D] broadcast over the batch.
template <class T>
Var<T> add_rows(Var<T> x, Var<T> table);

/// Per batch item, keeps rows `rows[b]` of x[B, T, D] in the given order.
/// Rows not listed receive zero gradient.
template <class T>
Var<T> gather_rows(Var<T> x, const std::vector<std::vector<std::size_t>>& rows);

/// Row `index` of every batch item of x[B, T, D] -> [B, D].
template <class T>
Var<T> take_row(Var<T> x, std::size_t index);

/// Mean negative log-likelihood of softmax(logits[B, C]) at `labels`.
template <class T>
Var<T> cross_entropy(Var<T> logits, const std::vector<std::size_t>& labels);

}  // namespace gft::ad
