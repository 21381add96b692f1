#include "gft/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gft {

namespace {
thread_local MultiplyCounter* active_counter = nullptr;
}

MultiplyCounter::MultiplyCounter() : previous_(active_counter) { active_counter = this; }

MultiplyCounter::~MultiplyCounter() { active_counter = previous_; }

void MultiplyCounter::record(std::uint64_t macs) {
  if (active_counter) active_counter->count_ += macs;
}

}  // namespace gft

namespace gft::ops {

namespace {

void require_matrix(const Shape& s, const char* what) {
  if (s.rank() != 2) throw std::invalid_argument(std::string(what) + ": expected a matrix, got " + s.str());
}

}  // namespace

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_matrix(a.shape(), "matmul");
  require_matrix(b.shape(), "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k)
    throw std::invalid_argument("matmul: inner dimensions differ " + a.shape().str() + " x " + b.shape().str());
  MultiplyCounter::record(static_cast<std::uint64_t>(m) * k * p);

  BasicTensor<T> c(Shape{m, p});
  std::vector<double> acc(p);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const T* brow = pb + kk * p;
      for (std::size_t j = 0; j < p; ++j) acc[j] += av * static_cast<double>(brow[j]);
    }
    T* crow = c.ptr() + i * p;
    for (std::size_t j = 0; j < p; ++j) crow[j] = static_cast<T>(acc[j]);
  }
  return c;
}

template <class T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_matrix(a.shape(), "matmul_tn");
  require_matrix(b.shape(), "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k)
    throw std::invalid_argument("matmul_tn: leading dimensions differ " + a.shape().str() + " / " + b.shape().str());
  MultiplyCounter::record(static_cast<std::uint64_t>(m) * k * p);

  std::vector<double> acc(m * p, 0.0);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* arow = pa + kk * m;
    const T* brow = pb + kk * p;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* out = acc.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) out[j] += av * static_cast<double>(brow[j]);
    }
  }
  BasicTensor<T> c(Shape{m, p});
  for (std::size_t i = 0; i < m * p; ++i) c[i] = static_cast<T>(acc[i]);
  return c;
}

template <class T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_matrix(a.shape(), "matmul_nt");
  require_matrix(b.shape(), "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(0);
  if (b.dim(1) != k)
    throw std::invalid_argument("matmul_nt: inner dimensions differ " + a.shape().str() + " / " + b.shape().str());
  MultiplyCounter::record(static_cast<std::uint64_t>(m) * k * p);

  BasicTensor<T> c(Shape{m, p});
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = pa + i * k;
    for (std::size_t j = 0; j < p; ++j) {
      const T* brow = pb + j * k;
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += static_cast<double>(arow[kk]) * static_cast<double>(brow[kk]);
      c[i * p + j] = static_cast<T>(s);
    }
  }
  return c;
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_matrix(a.shape(), "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  BasicTensor<T> t(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be positive");
  if (axis >= x.rank()) throw std::invalid_argument("softmax: axis out of range");
  const std::size_t outer = x.shape().outer(axis);
  const std::size_t len = x.dim(axis);
  const std::size_t inner = x.shape().inner(axis);

  BasicTensor<T> out(x.shape());
  std::vector<double> e(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -INFINITY;
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, static_cast<double>(x[base + i * inner]));
      double sum = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        e[i] = std::exp((static_cast<double>(x[base + i * inner]) - mx) / temperature);
        sum += e[i];
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] = static_cast<T>(e[i] / sum);
    }
  }
  return out;
}

template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          double eps) {
  const std::size_t width = x.dim(x.rank() - 1);
  if (gain.numel() != width || bias.numel() != width)
    throw std::invalid_argument("layer_norm: gain/bias must match last axis of " + x.shape().str());
  const std::size_t rows = x.numel() / width;
  BasicTensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.ptr() + r * width;
    double mean = 0.0;
    for (std::size_t i = 0; i < width; ++i) mean += row[i];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      const double d = row[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(width);
    const double denom = std::sqrt(var + eps);
    T* o = out.ptr() + r * width;
    for (std::size_t i = 0; i < width; ++i) {
      const double z = denom > 0.0 ? (row[i] - mean) / denom : 0.0;
      o[i] = static_cast<T>(z * gain[i] + bias[i]);
    }
  }
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_derivative(double x) {
  constexpr double inv_sqrt_2pi = 0.398942280401432677939946059934;
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  return cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = static_cast<T>(gelu(static_cast<double>(x[i])));
  return out;
}

template <class T>
BasicTensor<T> conv1d_same(const BasicTensor<T>& x, const BasicTensor<T>& kernel) {
  const std::size_t k = kernel.numel();
  const std::size_t n = x.dim(x.rank() - 1);
  if (k % 2 == 0) throw std::invalid_argument("conv1d_same: kernel length must be odd");
  if (k > n) throw std::invalid_argument("conv1d_same: kernel longer than signal");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t rows = x.numel() / n;
  BasicTensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.ptr() + r * n;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(t) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        s += static_cast<double>(kernel[t]) * static_cast<double>(row[src]);
      }
      out[r * n + i] = static_cast<T>(s);
    }
  }
  return out;
}

template <class T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw std::invalid_argument("reduce_mean: axis out of range");
  const std::size_t outer = x.shape().outer(axis);
  const std::size_t len = x.dim(axis);
  const std::size_t inner = x.shape().inner(axis);
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) dims.push_back(x.dim(i));
  if (dims.empty()) dims.push_back(1);

  BasicTensor<T> out(Shape(std::move(dims)));
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      double s = 0.0;
      for (std::size_t i = 0; i < len; ++i) s += x[o * len * inner + i * inner + in];
      out[o * inner + in] = static_cast<T>(s / static_cast<double>(len));
    }
  }
  return out;
}

template <class T>
BasicTensor<T> abs(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = std::abs(x[i]);
  return out;
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <class T>
std::vector<std::size_t> topk_indices(std::span<const T> x, std::size_t k) {
  if (k < 1 || k > x.size())
    throw std::invalid_argument("topk_indices: k=" + std::to_string(k) + " outside [1, " + std::to_string(x.size()) +
                                "]");
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Strict weak order: larger value first, then lower index.
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return x[a] > x[b] || (x[a] == x[b] && a < b); });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

#define GFT_INSTANTIATE_OPS(T)                                                                          \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> matmul_tn(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> matmul_nt(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                            \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t, double);                         \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                     double);                                                           \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> conv1d_same(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> reduce_mean(const BasicTensor<T>&, std::size_t);                             \
  template BasicTensor<T> abs(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template std::vector<std::size_t> topk_indices(std::span<const T>, std::size_t);

GFT_INSTANTIATE_OPS(float)
GFT_INSTANTIATE_OPS(double)

#undef GFT_INSTANTIATE_OPS

}  // namespace gft::ops
