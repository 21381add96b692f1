#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gft/tensor.hpp"

// Primitive kernels. All are pure functions of their inputs. Reductions and
// matrix products accumulate in double regardless of the element type.
namespace gft::ops {

/// c[m,p] = sum_k a[m,k] * b[k,p]
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// aᵀ·b for a[K×M], b[K×P]
template <class T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// a·bᵀ for a[M×K], b[P×K]
template <class T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

/// exp(x/τ) / Σ exp(x/τ) along `axis`, max-subtracted.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis, double temperature = 1.0);

/// Normalizes every row of the last axis to zero mean and unit variance,
/// then applies gain and bias (both sized like the last axis).
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          double eps);

/// Exact GELU, x·Φ(x) with Φ from erf (not the tanh approximation).
template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x);
double gelu(double x);
double gelu_derivative(double x);

/// Zero-padded cross-correlation along the last axis; output keeps length N.
template <class T>
BasicTensor<T> conv1d_same(const BasicTensor<T>& x, const BasicTensor<T>& kernel);

/// Mean over `axis`; the axis is removed (a rank-1 input yields shape [1]).
template <class T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& x, std::size_t axis);

template <class T>
BasicTensor<T> abs(const BasicTensor<T>& x);

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Indices of the k largest values, ties toward the lower index, returned in
/// ascending index order.
template <class T>
std::vector<std::size_t> topk_indices(std::span<const T> x, std::size_t k);

template <class T>
std::vector<std::size_t> topk_indices(const BasicTensor<T>& x, std::size_t k) {
  return topk_indices(x.data(), k);
}

}  // namespace gft::ops

namespace gft {

/// Counts scalar multiply-accumulates performed by the matrix-product kernels
/// on the current thread while an instance is alive. Scopes nest; the
/// innermost one receives the counts.
class MultiplyCounter {
 public:
  MultiplyCounter();
  ~MultiplyCounter();
  MultiplyCounter(const MultiplyCounter&) = delete;
  MultiplyCounter& operator=(const MultiplyCounter&) = delete;

  std::uint64_t count() const { return count_; }

  static void record(std::uint64_t macs);

 private:
  std::uint64_t count_ = 0;
  MultiplyCounter* previous_ = nullptr;
};

}  // namespace gft
