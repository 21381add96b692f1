#include "gft/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "gft/fault_injection.hpp"
#include "gft/ops.hpp"

namespace gft::testing {

namespace {
std::atomic<BackwardFault> current_fault{BackwardFault::none};
}

void inject_backward_fault(BackwardFault fault) { current_fault.store(fault); }
BackwardFault active_backward_fault() { return current_fault.load(); }

}  // namespace gft::testing

namespace gft::ad {

template <class T>
Var<T> Tape<T>::leaf(BasicTensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::record(BasicTensor<T> value, std::vector<std::size_t> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (std::size_t p : parents) {
    if (p >= nodes_.size()) throw std::invalid_argument("tape: parent id does not exist");
    n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
const BasicTensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
BasicTensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
void Tape<T>::accumulate(std::size_t id, const BasicTensor<T>& g) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  if (!(g.shape() == n.value.shape()))
    throw std::logic_error("tape: gradient shape " + g.shape().str() + " != value shape " + n.value.shape().str());
  BasicTensor<T>& buf = grad_buffer(id);
  for (std::size_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (loss.value().numel() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  const std::size_t root = loss.id();
  std::vector<char> reachable(root + 1, 0);
  reachable[root] = 1;
  for (std::size_t id = root + 1; id-- > 0;) {
    if (!reachable[id]) continue;
    for (std::size_t p : nodes_[id].parents) reachable[p] = 1;
  }
  if (!nodes_[root].requires_grad) return;
  grad_buffer(root)[0] += T(1);
  for (std::size_t id = root + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!reachable[id] || !n.requires_grad || !n.backward || n.grad.empty()) continue;
    ++visits_;
    n.backward(*this, id);
  }
}

namespace {

template <class T>
void require_same_tape(Var<T> a, Var<T> b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("autodiff: operands recorded on different tapes");
}

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tape<T>& tape = *a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(ops::add(a.value(), b.value()), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, t.upstream(self));
    t.accumulate(ib, t.upstream(self));
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tape<T>& tape = *a.tape();
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& va = t.value(ia);
    const auto& vb = t.value(ib);
    BasicTensor<T> ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] = g[i] * vb[i];
      gb[i] = g[i] * va[i];
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

template <class T>
Var<T> scale(Var<T> a, double s) {
  Tape<T>& tape = *a.tape();
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(a.value()[i] * s);
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    BasicTensor<T> ga(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = static_cast<T>(g[i] * s);
    t.accumulate(ia, ga);
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  Tape<T>& tape = *a.tape();
  double s = 0.0;
  for (T v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return tape.record(BasicTensor<T>(Shape{1}, static_cast<T>(s)), {ia}, [ia](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, BasicTensor<T>(t.value(ia).shape(), t.upstream(self)[0]));
  });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& tape = *a.tape();
  const std::size_t ia = a.id();
  return tape.record(a.value().reshaped(std::move(shape)), {ia}, [ia](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, t.upstream(self).reshaped(t.value(ia).shape()));
  });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  Tape<T>& tape = *a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(ops::matmul(a.value(), b.value()), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(ia)) t.accumulate(ia, ops::matmul_nt(g, t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, ops::matmul_tn(t.value(ia), g));
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  require_same_tape(x, weight);
  require_same_tape(x, bias);
  const auto& w = weight.value();
  if (w.rank() != 2) throw std::invalid_argument("linear: weight must be a matrix");
  const std::size_t in = w.dim(0), out_dim = w.dim(1);
  const auto& xs = x.shape();
  if (xs.dims().back() != in)
    throw std::invalid_argument("linear: input " + xs.str() + " does not match weight " + w.shape().str());
  if (bias.value().numel() != out_dim) throw std::invalid_argument("linear: bias length mismatch");
  const std::size_t rows = x.value().numel() / in;

  BasicTensor<T> y = ops::matmul(x.value().reshaped(Shape{rows, in}), w);
  const auto& b = bias.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out_dim; ++j) y[r * out_dim + j] += b[j];
  std::vector<std::size_t> dims = xs.dims();
  dims.back() = out_dim;

  Tape<T>& tape = *x.tape();
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return tape.record(std::move(y).reshaped(Shape(dims)), {ix, iw, ib},
                     [ix, iw, ib, rows, in, out_dim](Tape<T>& t, std::size_t self) {
                       const BasicTensor<T> g = t.upstream(self).reshaped(Shape{rows, out_dim});
                       if (t.requires_grad(ix))
                         t.accumulate(ix, ops::matmul_nt(g, t.value(iw)).reshaped(t.value(ix).shape()));
                       if (t.requires_grad(iw))
                         t.accumulate(iw, ops::matmul_tn(t.value(ix).reshaped(Shape{rows, in}), g));
                       if (t.requires_grad(ib)) {
                         std::vector<double> acc(out_dim, 0.0);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < out_dim; ++j) acc[j] += g[r * out_dim + j];
                         BasicTensor<T> gb(Shape{out_dim});
                         for (std::size_t j = 0; j < out_dim; ++j) gb[j] = static_cast<T>(acc[j]);
                         t.accumulate(ib, gb);
                       }
                     });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  Tape<T>& tape = *x.tape();
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape.record(
      ops::layer_norm(x.value(), gain.value(), bias.value(), eps), {ix, ig, ib},
      [ix, ig, ib, eps](Tape<T>& t, std::size_t self) {
        const auto& xv = t.value(ix);
        const auto& gv = t.value(ig);
        const auto& g = t.upstream(self);
        const std::size_t width = xv.dim(xv.rank() - 1);
        const std::size_t rows = xv.numel() / width;
        BasicTensor<T> gx(xv.shape());
        std::vector<double> dgain(width, 0.0), dbias(width, 0.0), xhat(width), dxhat(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* row = xv.ptr() + r * width;
          const T* grow = g.ptr() + r * width;
          double mean = 0.0;
          for (std::size_t i = 0; i < width; ++i) mean += row[i];
          mean /= static_cast<double>(width);
          double var = 0.0;
          for (std::size_t i = 0; i < width; ++i) var += (row[i] - mean) * (row[i] - mean);
          var /= static_cast<double>(width);
          const double rstd = var + eps > 0.0 ? 1.0 / std::sqrt(var + eps) : 0.0;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t i = 0; i < width; ++i) {
            xhat[i] = (row[i] - mean) * rstd;
            dxhat[i] = static_cast<double>(grow[i]) * gv[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xhat[i];
            dgain[i] += static_cast<double>(grow[i]) * xhat[i];
            dbias[i] += grow[i];
          }
          mean_d /= static_cast<double>(width);
          mean_dx /= static_cast<double>(width);
          for (std::size_t i = 0; i < width; ++i)
            gx[r * width + i] = static_cast<T>(rstd * (dxhat[i] - mean_d - xhat[i] * mean_dx));
        }
        const double gain_factor =
            testing::active_backward_fault() == testing::BackwardFault::layer_norm_gain ? 1.5 : 1.0;
        BasicTensor<T> gg(Shape{width}), gb(Shape{width});
        for (std::size_t i = 0; i < width; ++i) {
          gg[i] = static_cast<T>(dgain[i] * gain_factor);
          gb[i] = static_cast<T>(dbias[i]);
        }
        t.accumulate(ix, gx);
        t.accumulate(ig, gg);
        t.accumulate(ib, gb);
      });
}

template <class T>
Var<T> gelu(Var<T> x) {
  Tape<T>& tape = *x.tape();
  const std::size_t ix = x.id();
  return tape.record(ops::gelu(x.value()), {ix}, [ix](Tape<T>& t, std::size_t self) {
    const auto& xv = t.value(ix);
    const auto& g = t.upstream(self);
    BasicTensor<T> gx(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i)
      gx[i] = static_cast<T>(g[i] * ops::gelu_derivative(static_cast<double>(xv[i])));
    t.accumulate(ix, gx);
  });
}

template <class T>
AttentionOutput<T> attention(Var<T> qkv, std::size_t heads) {
  const auto& v = qkv.value();
  if (v.rank() != 3 || v.dim(2) % 3 != 0) throw std::invalid_argument("attention: expected qkv of shape [B, T, 3D]");
  const std::size_t batch = v.dim(0), len = v.dim(1), width = v.dim(2) / 3;
  if (heads == 0 || width % heads != 0) throw std::invalid_argument("attention: width not divisible by head count");
  const std::size_t hd = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t stride = 3 * width;

  AttentionOutput<T> result;
  result.scores = BasicTensor<T>(Shape{batch, heads, len, len});
  result.probs = BasicTensor<T>(Shape{batch, heads, len, len});
  BasicTensor<T> out(Shape{batch, len, width});
  std::vector<double> row(len), acc(hd);
  MultiplyCounter::record(static_cast<std::uint64_t>(2) * batch * heads * len * len * hd);

  for (std::size_t b = 0; b < batch; ++b) {
    const T* base = v.ptr() + b * len * stride;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t qo = h * hd, ko = width + h * hd, vo = 2 * width + h * hd;
      T* srow = result.scores.ptr() + ((b * heads + h) * len) * len;
      T* prow = result.probs.ptr() + ((b * heads + h) * len) * len;
      for (std::size_t i = 0; i < len; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < len; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e)
            s += static_cast<double>(base[i * stride + qo + e]) * static_cast<double>(base[j * stride + ko + e]);
          row[j] = s * scale;
          srow[i * len + j] = static_cast<T>(row[j]);
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < len; ++j) {
          const double p = row[j] / z;
          prow[i * len + j] = static_cast<T>(p);
          for (std::size_t e = 0; e < hd; ++e) acc[e] += p * static_cast<double>(base[j * stride + vo + e]);
        }
        for (std::size_t e = 0; e < hd; ++e) out[(b * len + i) * width + h * hd + e] = static_cast<T>(acc[e]);
      }
    }
  }

  Tape<T>& tape = *qkv.tape();
  const std::size_t iq = qkv.id();
  result.out = tape.record(
      std::move(out), {iq},
      [iq, batch, len, width, heads, hd, scale, stride, probs = result.probs](Tape<T>& t, std::size_t self) {
        const auto& xv = t.value(iq);
        const auto& g = t.upstream(self);
        BasicTensor<T> gx(xv.shape());
        std::vector<double> dp(len), ds(len);
        std::vector<double> dq(hd), dk(len * hd), dv(len * hd);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* base = xv.ptr() + b * len * stride;
          T* gbase = gx.ptr() + b * len * stride;
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t qo = h * hd, ko = width + h * hd, vo = 2 * width + h * hd;
            const T* prow = probs.ptr() + ((b * heads + h) * len) * len;
            std::fill(dk.begin(), dk.end(), 0.0);
            std::fill(dv.begin(), dv.end(), 0.0);
            for (std::size_t i = 0; i < len; ++i) {
              const T* go = g.ptr() + (b * len + i) * width + h * hd;
              double dot = 0.0;
              for (std::size_t j = 0; j < len; ++j) {
                double s = 0.0;
                for (std::size_t e = 0; e < hd; ++e) s += static_cast<double>(go[e]) * base[j * stride + vo + e];
                dp[j] = s;
                dot += s * prow[i * len + j];
                const double p = prow[i * len + j];
                for (std::size_t e = 0; e < hd; ++e) dv[j * hd + e] += p * go[e];
              }
              std::fill(dq.begin(), dq.end(), 0.0);
              for (std::size_t j = 0; j < len; ++j) {
                ds[j] = prow[i * len + j] * (dp[j] - dot) * scale;
                for (std::size_t e = 0; e < hd; ++e) {
                  dq[e] += ds[j] * base[j * stride + ko + e];
                  dk[j * hd + e] += ds[j] * base[i * stride + qo + e];
                }
              }
              for (std::size_t e = 0; e < hd; ++e) gbase[i * stride + qo + e] = static_cast<T>(dq[e]);
            }
            for (std::size_t j = 0; j < len; ++j)
              for (std::size_t e = 0; e < hd; ++e) {
                gbase[j * stride + ko + e] = static_cast<T>(dk[j * hd + e]);
                gbase[j * stride + vo + e] = static_cast<T>(dv[j * hd + e]);
              }
          }
        }
        t.accumulate(iq, gx);
      });
  return result;
}

template <class T>
Var<T> prepend_token(Var<T> patches, Var<T> token) {
  require_same_tape(patches, token);
  const auto& p = patches.value();
  if (p.rank() != 3) throw std::invalid_argument("prepend_token: patches must be [B, N, D]");
  const std::size_t batch = p.dim(0), n = p.dim(1), width = p.dim(2);
  if (token.value().numel() != width) throw std::invalid_argument("prepend_token: token width mismatch");
  BasicTensor<T> out(Shape{batch, n + 1, width});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(token.value().ptr(), width, out.ptr() + b * (n + 1) * width);
    std::copy_n(p.ptr() + b * n * width, n * width, out.ptr() + (b * (n + 1) + 1) * width);
  }
  Tape<T>& tape = *patches.tape();
  const std::size_t ip = patches.id(), it = token.id();
  return tape.record(std::move(out), {ip, it}, [ip, it, batch, n, width](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    BasicTensor<T> gp(t.value(ip).shape());
    BasicTensor<T> gt(t.value(it).shape());
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t e = 0; e < width; ++e) gt[e] += g[b * (n + 1) * width + e];
      std::copy_n(g.ptr() + (b * (n + 1) + 1) * width, n * width, gp.ptr() + b * n * width);
    }
    t.accumulate(ip, gp);
    t.accumulate(it, gt);
  });
}

template <class T>
Var<T> add_rows(Var<T> x, Var<T> table) {
  require_same_tape(x, table);
  const auto& xv = x.value();
  if (xv.rank() != 3) throw std::invalid_argument("add_rows: x must be [B, T, D]");
  const std::size_t batch = xv.dim(0), len = xv.dim(1), width = xv.dim(2);
  if (!(table.value().shape() == Shape{len, width}))
    throw std::invalid_argument("add_rows: table " + table.value().shape().str() + " does not match " + xv.shape().str());
  BasicTensor<T> out = xv;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < len * width; ++i) out[b * len * width + i] += table.value()[i];
  Tape<T>& tape = *x.tape();
  const std::size_t ix = x.id(), it = table.id();
  return tape.record(std::move(out), {ix, it}, [ix, it, batch, len, width](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    t.accumulate(ix, g);
    if (!t.requires_grad(it)) return;
    BasicTensor<T> gt(Shape{len, width});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < len * width; ++i) gt[i] += g[b * len * width + i];
    t.accumulate(it, gt);
  });
}

template <class T>
Var<T> gather_rows(Var<T> x, const std::vector<std::vector<std::size_t>>& rows) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw std::invalid_argument("gather_rows: x must be [B, T, D]");
  const std::size_t batch = xv.dim(0), len = xv.dim(1), width = xv.dim(2);
  if (rows.size() != batch) throw std::invalid_argument("gather_rows: one row list per batch item required");
  const std::size_t kept = rows.empty() ? 0 : rows.front().size();
  if (kept == 0) throw std::invalid_argument("gather_rows: empty row list");
  for (const auto& r : rows) {
    if (r.size() != kept) throw std::invalid_argument("gather_rows: ragged row lists");
    for (std::size_t i : r)
      if (i >= len) throw std::invalid_argument("gather_rows: row index out of range");
  }
  BasicTensor<T> out(Shape{batch, kept, width});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < kept; ++k)
      std::copy_n(xv.ptr() + (b * len + rows[b][k]) * width, width, out.ptr() + (b * kept + k) * width);
  Tape<T>& tape = *x.tape();
  const std::size_t ix = x.id();
  return tape.record(std::move(out), {ix}, [ix, rows, batch, len, kept, width](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    BasicTensor<T> gx(Shape{batch, len, width});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < kept; ++k) {
        const T* src = g.ptr() + (b * kept + k) * width;
        T* dst = gx.ptr() + (b * len + rows[b][k]) * width;
        for (std::size_t e = 0; e < width; ++e) dst[e] += src[e];
      }
    t.accumulate(ix, gx);
  });
}

template <class T>
Var<T> take_row(Var<T> x, std::size_t index) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw std::invalid_argument("take_row: x must be [B, T, D]");
  const std::size_t batch = xv.dim(0), len = xv.dim(1), width = xv.dim(2);
  if (index >= len) throw std::invalid_argument("take_row: index out of range");
  BasicTensor<T> out(Shape{batch, width});
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(xv.ptr() + (b * len + index) * width, width, out.ptr() + b * width);
  Tape<T>& tape = *x.tape();
  const std::size_t ix = x.id();
  return tape.record(std::move(out), {ix}, [ix, index, batch, len, width](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    BasicTensor<T> gx(Shape{batch, len, width});
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(g.ptr() + b * width, width, gx.ptr() + (b * len + index) * width);
    t.accumulate(ix, gx);
  });
}

template <class T>
Var<T> cross_entropy(Var<T> logits, const std::vector<std::size_t>& labels) {
  const auto& lv = logits.value();
  if (lv.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be [B, C]");
  const std::size_t batch = lv.dim(0), classes = lv.dim(1);
  if (labels.size() != batch) throw std::invalid_argument("cross_entropy: one label per row required");
  for (std::size_t y : labels)
    if (y >= classes) throw std::invalid_argument("cross_entropy: label out of range");

  BasicTensor<T> probs = ops::softmax(lv, 1);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = lv.ptr() + b * classes;
    double mx = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    loss += mx + std::log(z) - row[labels[b]];
  }
  loss /= static_cast<double>(batch);

  Tape<T>& tape = *logits.tape();
  const std::size_t il = logits.id();
  return tape.record(BasicTensor<T>(Shape{1}, static_cast<T>(loss)), {il},
                     [il, labels, probs = std::move(probs), batch, classes](Tape<T>& t, std::size_t self) {
                       const double up = t.upstream(self)[0] / static_cast<double>(batch);
                       BasicTensor<T> g(probs.shape());
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t c = 0; c < classes; ++c) {
                           const double target = c == labels[b] ? 1.0 : 0.0;
                           g[b * classes + c] = static_cast<T>((probs[b * classes + c] - target) * up);
                         }
                       t.accumulate(il, g);
                     });
}

#define GFT_INSTANTIATE_AD(T)                                                              \
  template class Tape<T>;                                                                  \
  template class Var<T>;                                                                   \
  template Var<T> add(Var<T>, Var<T>);                                                     \
  template Var<T> mul(Var<T>, Var<T>);                                                     \
  template Var<T> scale(Var<T>, double);                                                   \
  template Var<T> sum(Var<T>);                                                             \
  template Var<T> reshape(Var<T>, Shape);                                                  \
  template Var<T> matmul(Var<T>, Var<T>);                                                  \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                          \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                              \
  template Var<T> gelu(Var<T>);                                                            \
  template AttentionOutput<T> attention(Var<T>, std::size_t);                              \
  template Var<T> prepend_token(Var<T>, Var<T>);                                           \
  template Var<T> add_rows(Var<T>, Var<T>);                                                \
  template Var<T> gather_rows(Var<T>, const std::vector<std::vector<std::size_t>>&);       \
  template Var<T> take_row(Var<T>, std::size_t);                                           \
  template Var<T> cross_entropy(Var<T>, const std::vector<std::size_t>&);

GFT_INSTANTIATE_AD(float)
GFT_INSTANTIATE_AD(double)

#undef GFT_INSTANTIATE_AD

}  // namespace gft::ad
