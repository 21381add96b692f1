#include "gft/gala.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "gft/ops.hpp"

namespace gft::gala {

void GalaParams::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("gala params: " + what); };
  if (kernel_size == 0 || kernel_size % 2 == 0) fail("kernel_size must be odd");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay must lie in [0, 1)");
  if (!(norm_epsilon > 0.0)) fail("norm_epsilon must be positive");
}

template <class T>
BasicTensor<T> mean_attention(const BasicTensor<T>& scores) {
  if (scores.rank() != 4 || scores.dim(2) != scores.dim(3))
    throw std::invalid_argument("mean_attention: expected [B, H, T, T], got " + scores.shape().str());
  const std::size_t batch = scores.dim(0), heads = scores.dim(1), len = scores.dim(2);
  if (len < 2) throw std::invalid_argument("mean_attention: need at least one patch besides the class token");
  BasicTensor<T> out(Shape{batch, heads, len - 1});
  for (std::size_t bh = 0; bh < batch * heads; ++bh)
    for (std::size_t i = 1; i < len; ++i) {
      const T* row = scores.ptr() + (bh * len + i) * len;
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) s += row[j];
      out[bh * (len - 1) + i - 1] = static_cast<T>(s / static_cast<double>(len));
    }
  return out;
}

template <class T>
BasicTensor<T> spatial_gradient(const BasicTensor<T>& x) {
  const std::size_t n = x.dim(x.rank() - 1);
  if (n < 2) throw std::invalid_argument("spatial_gradient: need at least two positions");
  const std::size_t rows = x.numel() / n;
  BasicTensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.ptr() + r * n;
    T* o = out.ptr() + r * n;
    o[0] = static_cast<T>(static_cast<double>(in[1]) - static_cast<double>(in[0]));
    for (std::size_t i = 1; i + 1 < n; ++i)
      o[i] = static_cast<T>((static_cast<double>(in[i + 1]) - static_cast<double>(in[i - 1])) / 2.0);
    o[n - 1] = static_cast<T>(static_cast<double>(in[n - 1]) - static_cast<double>(in[n - 2]));
  }
  return out;
}

template <class T>
BasicTensor<T> aggregate_heads(const BasicTensor<T>& g) {
  if (g.rank() != 3) throw std::invalid_argument("aggregate_heads: expected [B, H, N], got " + g.shape().str());
  const std::size_t batch = g.dim(0), heads = g.dim(1), n = g.dim(2);
  BasicTensor<T> out(Shape{batch, n});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t h = 0; h < heads; ++h) s += std::abs(static_cast<double>(g[(b * heads + h) * n + i]));
      out[b * n + i] = static_cast<T>(s / static_cast<double>(heads));
    }
  return out;
}

template <class T>
BasicTensor<T> smooth(const BasicTensor<T>& scores, const BasicTensor<T>& kernel) {
  return ops::conv1d_same(scores, kernel);
}

template <class T>
BasicTensor<T> importance_scores(const BasicTensor<T>& attention_scores) {
  return aggregate_heads(spatial_gradient(mean_attention(attention_scores)));
}

template <class T>
BasicTensor<T> z_normalize(const BasicTensor<T>& scores, double eps) {
  const std::size_t n = scores.dim(scores.rank() - 1);
  const std::size_t rows = scores.numel() / n;
  BasicTensor<T> out(scores.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = scores.ptr() + r * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += in[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (in[i] - mean) * (in[i] - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = static_cast<T>((in[i] - mean) / (sd + eps));
  }
  return out;
}

template <class T>
BasicTensor<T> ema_update(ImportanceState& state, const BasicTensor<T>& scores,
                          const std::vector<std::vector<std::size_t>>& patch_ids, const GalaParams& params,
                          bool training) {
  if (scores.rank() != 2) throw std::invalid_argument("ema_update: expected scores [B, N_cur]");
  const std::size_t batch = scores.dim(0), n = scores.dim(1);
  if (patch_ids.size() != batch) throw std::invalid_argument("ema_update: patch_ids misaligned with batch");
  for (const auto& ids : patch_ids) {
    if (ids.size() != n) throw std::invalid_argument("ema_update: patch_ids misaligned with score columns");
    for (std::size_t id : ids)
      if (id >= state.num_patches) throw std::invalid_argument("ema_update: patch id outside the state");
  }
  if (!scores.all_finite()) throw NonFiniteError("ema_update: non-finite scores");

  BasicTensor<T> normed = z_normalize(scores, params.norm_epsilon);
  if (!training) return normed;

  const std::size_t total = state.num_patches;
  if (state.ema.empty()) {
    state.ema = Tensor(Shape{total});
    state.seen.assign(total, 0);
  }
  std::vector<double> sum(total, 0.0);
  std::vector<std::size_t> count(total, 0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i) {
      sum[patch_ids[b][i]] += normed[b * n + i];
      ++count[patch_ids[b][i]];
    }
  const double beta = params.ema_decay;
  for (std::size_t id = 0; id < total; ++id) {
    if (count[id] == 0) continue;
    const double m = sum[id] / static_cast<double>(count[id]);
    if (!state.seen[id]) {
      state.ema[id] = static_cast<float>(m);
      state.seen[id] = 1;
    } else {
      state.ema[id] = static_cast<float>(beta * state.ema[id] + (1.0 - beta) * m);
    }
  }
  ++state.step_count;

  BasicTensor<T> blended(scores.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      blended[b * n + i] =
          static_cast<T>(beta * state.ema[patch_ids[b][i]] + (1.0 - beta) * static_cast<double>(normed[b * n + i]));
  return blended;
}

template <class T>
ImportanceDistribution<T> importance_distribution(const BasicTensor<T>& scores, double temperature,
                                                  std::vector<std::vector<std::size_t>> patch_ids) {
  if (scores.rank() != 2) throw std::invalid_argument("importance_distribution: expected [B, N_cur]");
  if (patch_ids.size() != scores.dim(0)) throw std::invalid_argument("importance_distribution: patch_ids misaligned");
  for (const auto& ids : patch_ids)
    if (ids.size() != scores.dim(1)) throw std::invalid_argument("importance_distribution: patch_ids misaligned");
  ImportanceDistribution<T> d;
  d.probs = ops::softmax(scores, 1, temperature);
  d.patch_ids = std::move(patch_ids);
  return d;
}

template <class T>
GalaTrace<T> run_pipeline(const BasicTensor<T>& attention_scores, const BasicTensor<T>& kernel,
                          const std::vector<std::vector<std::size_t>>& patch_ids, const GalaParams& params,
                          ImportanceState& state, bool training) {
  GalaTrace<T> t;
  t.mean = mean_attention(attention_scores);
  t.gradient = spatial_gradient(t.mean);
  t.aggregated = aggregate_heads(t.gradient);
  t.smoothed = smooth(t.aggregated, kernel);
  t.blended = ema_update(state, t.smoothed, patch_ids, params, training);
  t.distribution = importance_distribution(t.blended, params.temperature, patch_ids);
  return t;
}

template <class T>
GalaBlockOutput<T> gala_block(const TokenSequence<T>& seq, std::span<const ad::Var<T>> vars, const BlockSlots& slots,
                              const BasicTensor<T>& kernel, const ViTConfig& cfg, const GalaParams& params,
                              ImportanceState& state, bool training) {
  GalaBlockOutput<T> out;
  out.block = encoder_block(seq, vars, slots, cfg);
  out.trace = run_pipeline(out.block.scores, kernel, out.block.seq.patch_ids, params, state, training);
  return out;
}

#define GFT_INSTANTIATE_GALA(T)                                                                                    \
  template BasicTensor<T> mean_attention(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> spatial_gradient(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> aggregate_heads(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> smooth(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
  template BasicTensor<T> importance_scores(const BasicTensor<T>&);                                                \
  template BasicTensor<T> z_normalize(const BasicTensor<T>&, double);                                              \
  template BasicTensor<T> ema_update(ImportanceState&, const BasicTensor<T>&,                                      \
                                     const std::vector<std::vector<std::size_t>>&, const GalaParams&, bool);       \
  template ImportanceDistribution<T> importance_distribution(const BasicTensor<T>&, double,                        \
                                                             std::vector<std::vector<std::size_t>>);               \
  template GalaTrace<T> run_pipeline(const BasicTensor<T>&, const BasicTensor<T>&,                                 \
                                     const std::vector<std::vector<std::size_t>>&, const GalaParams&,              \
                                     ImportanceState&, bool);                                                      \
  template GalaBlockOutput<T> gala_block(const TokenSequence<T>&, std::span<const ad::Var<T>>, const BlockSlots&,  \
                                         const BasicTensor<T>&, const ViTConfig&, const GalaParams&,               \
                                         ImportanceState&, bool);

GFT_INSTANTIATE_GALA(float)
GFT_INSTANTIATE_GALA(double)

#undef GFT_INSTANTIATE_GALA

}  // namespace gft::gala
