#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gft/gala.hpp"
#include "gft/pps.hpp"
#include "gft/vit.hpp"

namespace gft {

/// Architecture: patch embedding, `vit.num_base_blocks` plain encoder blocks,
/// one GALA block per schedule stage (each followed by selection), and a
/// linear head on the class token.
struct GftConfig {
  ViTConfig vit;
  gala::GalaParams gala;
  pps::SelectionSchedule schedule;

  /// Validates every part; returns schedule warnings.
  std::vector<std::string> validate() const;

  /// Layer groups in depth order: embedding, block1..B, gala1..L, head.
  std::vector<std::string> layer_groups() const;
};

template <class T>
struct GftModel {
  GftConfig config;
  ParameterStore<T> params;
  EmbeddingSlots embedding;
  std::vector<BlockSlots> base_blocks;
  std::vector<BlockSlots> gala_blocks;
  std::vector<std::size_t> smoothing_kernels;  ///< frozen; never receive gradient
  LinearSlots head;

  template <class U>
  GftModel<U> cast() const {
    GftModel<U> m;
    m.config = config;
    m.params = params.template cast<U>();
    m.embedding = embedding;
    m.base_blocks = base_blocks;
    m.gala_blocks = gala_blocks;
    m.smoothing_kernels = smoothing_kernels;
    m.head = head;
    return m;
  }
};

/// Fresh model with seeded initialization.
GftModel<float> make_model(const GftConfig& config, std::uint64_t seed);

/// One importance state per GALA stage.
std::vector<gala::ImportanceState> make_states(const GftConfig& config);

struct ForwardOptions {
  bool training = false;
  /// When set, each stage keeps exactly these ids instead of ranking by
  /// importance (used to hold routing fixed while probing gradients).
  const std::vector<pps::SelectionMask>* forced_masks = nullptr;
};

template <class T>
struct StageOutput {
  TokenSequence<T> block_tokens;  ///< GALA block output before selection
  BasicTensor<T> attention;       ///< post-softmax attention of the block
  gala::GalaTrace<T> trace;
  pps::Selection<T> selection;
};

template <class T>
struct ForwardResult {
  ad::Var<T> logits;
  std::vector<ad::Var<T>> params;  ///< bound leaves, in parameter-store order
  std::vector<StageOutput<T>> stages;
  std::vector<std::size_t> gala_tokens;  ///< tokens entering each GALA block

  std::vector<pps::SelectionMask> masks() const;
};

/// Patch embedding followed by the base encoder blocks.
template <class T>
TokenSequence<T> encode_base(ad::Tape<T>& tape, const GftModel<T>& model, std::span<const ad::Var<T>> vars,
                             const BasicTensor<T>& images);

/// GALA block `stage`, then selection. `keep_ratio` 1.0 keeps every patch.
template <class T>
StageOutput<T> run_stage(const GftModel<T>& model, std::span<const ad::Var<T>> vars, const TokenSequence<T>& seq,
                         std::size_t stage, double keep_ratio, gala::ImportanceState& state, const ForwardOptions& opts);

/// Full forward pass. `states` may be null in evaluation mode.
template <class T>
ForwardResult<T> gft_forward(ad::Tape<T>& tape, const GftModel<T>& model, const BasicTensor<T>& images,
                             std::vector<gala::ImportanceState>* states, const ForwardOptions& opts = {});

/// The same network with GALA scoring and selection removed: every block
/// runs on all tokens.
template <class T>
ad::Var<T> vit_forward(ad::Tape<T>& tape, const GftModel<T>& model, const BasicTensor<T>& images);

/// Mean |grad| over the trainable parameters of each layer group, in depth
/// order. `vars` must be the bound leaves after backward.
template <class T>
std::vector<std::pair<std::string, double>> per_layer_grad_norms(const GftModel<T>& model,
                                                                 std::span<const ad::Var<T>> vars);

}  // namespace gft
