#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gft/gala.hpp"
#include "gft/vit.hpp"

namespace gft::pps {

/// Fraction of the ORIGINAL patch count kept after each GALA stage.
struct SelectionSchedule {
  std::vector<double> keep_ratios{0.75, 0.50, 0.25};

  std::size_t stages() const { return keep_ratios.size(); }
  /// Throws for ratios outside (0, 1] or an empty schedule. Returns warnings
  /// (currently only for increasing ratios, which are tolerated).
  std::vector<std::string> validate() const;
};

/// max(1, floor(ratio * original)); a 1e-9 slack absorbs representation
/// error such as 0.29 * 100 = 28.999999999999996.
std::size_t keep_count(double ratio, std::size_t original);

/// Patch ids surviving one stage, per batch item, ascending.
struct SelectionMask {
  std::size_t stage = 0;
  std::vector<std::vector<std::size_t>> kept;

  friend bool operator==(const SelectionMask&, const SelectionMask&) = default;
};

template <class T>
struct Selection {
  TokenSequence<T> seq;
  SelectionMask mask;
};

/// Keeps the class token and the listed original patch ids (which must be
/// present in `seq`). Token vectors are copied unchanged.
template <class T>
TokenSequence<T> keep_patches(const TokenSequence<T>& seq, const std::vector<std::vector<std::size_t>>& kept_ids);

/// Keeps the keep_count(ratio, original_patches) patches with the highest
/// probability, ties toward the lower original id. If that count exceeds the
/// current patch count, every current patch is kept.
template <class T>
Selection<T> select(const TokenSequence<T>& seq, const gala::ImportanceDistribution<T>& dist, double keep_ratio,
                    std::size_t original_patches, std::size_t stage = 0);

/// Per-patch importance used for ranking: the head-averaged absolute
/// central-difference gradient of the mean attention. Delegates to the GALA
/// pipeline so both definitions stay identical.
template <class T>
BasicTensor<T> importance_for_selection(const BasicTensor<T>& attention_scores) {
  return gala::importance_scores(attention_scores);
}

struct LayerCost {
  std::string name;
  std::size_t tokens = 0;  ///< tokens processed with selection active
  double base_flops = 0.0;
  double flops = 0.0;
};

/// Matmul FLOPs (2 per multiply-accumulate) of the whole model with and
/// without selection. `direct_flops` sums the real per-layer costs; the
/// closed form `C_base·(1 - Σ α_i (1 - k_i))` is linear in token count while
/// attention is quadratic, so the direct sum is the authoritative figure.
struct CostModel {
  double base_flops = 0.0;
  double direct_flops = 0.0;
  double closed_form_flops = 0.0;
  std::vector<double> alphas;
  std::vector<double> keep_ratios;
  std::vector<LayerCost> layers;
  /// Saving fraction if only the T² attention products shrank.
  double attention_only_saving = 0.0;

  double direct_saving() const { return 1.0 - direct_flops / base_flops; }
  double closed_form_saving() const { return 1.0 - closed_form_flops / base_flops; }
};

double closed_form_cost(double base, std::span<const double> alphas, std::span<const double> keep_ratios);

/// Matmul FLOPs of one encoder block over `tokens` tokens.
double block_flops(std::size_t tokens, const ViTConfig& cfg);

/// Tokens (class token included) entering each GALA block, plus the count
/// left after the final selection: N+1, then 1 + keep_count(k_i, N).
std::vector<std::size_t> stage_token_counts(std::size_t num_patches, const SelectionSchedule& schedule);

CostModel flops_estimate(const ViTConfig& cfg, const SelectionSchedule& schedule);

/// Cost from explicit per-GALA-block token counts (size = stages), with the
/// keep ratios that produced them.
CostModel flops_estimate(const ViTConfig& cfg, std::span<const std::size_t> gala_tokens,
                         std::span<const double> keep_ratios);

}  // namespace gft::pps
