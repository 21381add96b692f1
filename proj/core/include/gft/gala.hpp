#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gft/tensor.hpp"
#include "gft/vit.hpp"

// Gradient-of-attention importance. The pipeline turns one block's attention
// logits into a per-patch probability distribution:
//
//   mean over key axis -> 1-D central-difference gradient along the patch
//   axis -> |.| averaged over heads -> smoothing -> z-normalization and EMA
//   blending -> temperature softmax.
//
// The pipeline is a routing statistic. Nothing here is recorded on a tape.
namespace gft::gala {

struct GalaParams {
  std::size_t kernel_size = 3;
  double temperature = 1.0;
  double ema_decay = 0.9;
  double norm_epsilon = 1e-6;

  void validate() const;
};

/// Running importance per ORIGINAL patch id, shared by every batch item. One
/// state exists per GALA stage.
struct ImportanceState {
  ImportanceState() = default;
  explicit ImportanceState(std::size_t num_patches) : num_patches(num_patches) {}

  std::size_t num_patches = 0;
  Tensor ema;                      ///< [num_patches]; empty before the first training step
  std::vector<std::uint8_t> seen;  ///< ema[id] holds a value
  std::uint64_t step_count = 0;

  bool empty() const { return step_count == 0; }
  friend bool operator==(const ImportanceState&, const ImportanceState&) = default;
};

template <class T>
struct ImportanceDistribution {
  BasicTensor<T> probs;                             ///< [B, N_cur], rows sum to one
  std::vector<std::vector<std::size_t>> patch_ids;  ///< aligned with probs columns
};

/// scores[B, H, T, T] -> [B, H, T-1]: row means over all T key columns, then
/// the class-token row is dropped.
template <class T>
BasicTensor<T> mean_attention(const BasicTensor<T>& scores);

/// Forward difference at the first position, central difference inside,
/// backward difference at the last position, along the last axis.
template <class T>
BasicTensor<T> spatial_gradient(const BasicTensor<T>& x);

/// g[B, H, N] -> [B, N], mean over heads of |g|.
template <class T>
BasicTensor<T> aggregate_heads(const BasicTensor<T>& g);

template <class T>
BasicTensor<T> smooth(const BasicTensor<T>& scores, const BasicTensor<T>& kernel);

/// aggregate_heads ∘ spatial_gradient ∘ mean_attention
template <class T>
BasicTensor<T> importance_scores(const BasicTensor<T>& attention_scores);

/// Per row (x - mean) / (std + eps), population std.
template <class T>
BasicTensor<T> z_normalize(const BasicTensor<T>& scores, double eps);

/// Normalizes `scores[B, N_cur]` and blends with the running state. In
/// training mode the state absorbs the batch-mean normalized score of every
/// patch id present (copied on first sight) and the return value is
/// β·ema[id] + (1-β)·normed[b, id]. In evaluation mode the normalized scores
/// are returned and the state is left untouched.
template <class T>
BasicTensor<T> ema_update(ImportanceState& state, const BasicTensor<T>& scores,
                          const std::vector<std::vector<std::size_t>>& patch_ids, const GalaParams& params,
                          bool training);

template <class T>
ImportanceDistribution<T> importance_distribution(const BasicTensor<T>& scores, double temperature,
                                                  std::vector<std::vector<std::size_t>> patch_ids);

/// Every intermediate of one pipeline evaluation.
template <class T>
struct GalaTrace {
  BasicTensor<T> mean;        ///< [B, H, N_cur]
  BasicTensor<T> gradient;    ///< [B, H, N_cur]
  BasicTensor<T> aggregated;  ///< [B, N_cur]
  BasicTensor<T> smoothed;    ///< [B, N_cur]
  BasicTensor<T> blended;     ///< [B, N_cur]
  ImportanceDistribution<T> distribution;
};

template <class T>
GalaTrace<T> run_pipeline(const BasicTensor<T>& attention_scores, const BasicTensor<T>& kernel,
                          const std::vector<std::vector<std::size_t>>& patch_ids, const GalaParams& params,
                          ImportanceState& state, bool training);

template <class T>
struct GalaBlockOutput {
  BlockOutput<T> block;
  GalaTrace<T> trace;
};

/// Encoder block followed by the importance pipeline on that block's
/// attention logits.
template <class T>
GalaBlockOutput<T> gala_block(const TokenSequence<T>& seq, std::span<const ad::Var<T>> vars, const BlockSlots& slots,
                              const BasicTensor<T>& kernel, const ViTConfig& cfg, const GalaParams& params,
                              ImportanceState& state, bool training);

}  // namespace gft::gala
