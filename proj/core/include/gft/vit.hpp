#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gft/autodiff.hpp"
#include "gft/random.hpp"
#include "gft/tensor.hpp"

namespace gft {

/// Shape of the encoder. `desk()` is the small profile used for training on
/// one CPU core; `full()` mirrors a ViT-Base sized model at 224 px.
struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t num_base_blocks = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 4;
  double norm_eps = 1e-6;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t hidden_dim() const { return embed_dim * mlp_ratio; }

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  static ViTConfig desk();
  static ViTConfig full();
};

/// A named learnable array. `group` is the depth-ordered layer group used by
/// gradient-flow reports ("embedding", "block1", ..., "gala1", ..., "head").
template <class T>
struct Parameter {
  std::string name;
  std::string group;
  BasicTensor<T> value;
  bool trainable = true;
};

struct LinearSlots {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

struct NormSlots {
  std::size_t gain = 0;
  std::size_t bias = 0;
};

struct BlockSlots {
  NormSlots norm1;
  LinearSlots qkv;
  LinearSlots proj;
  NormSlots norm2;
  LinearSlots fc1;
  LinearSlots fc2;
};

struct EmbeddingSlots {
  LinearSlots proj;
  std::size_t class_token = 0;
  std::size_t positions = 0;
};

/// Flat, ordered list of parameters. Slot structs index into it.
template <class T>
class ParameterStore {
 public:
  std::size_t add(std::string name, std::string group, BasicTensor<T> value, bool trainable = true);

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Index of `name`; throws std::out_of_range if absent.
  std::size_t index_of(const std::string& name) const;

  template <class U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.group, p.value.template cast<U>(), p.trainable);
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
};

LinearSlots add_linear(ParameterStore<float>& store, const std::string& name, const std::string& group,
                       std::size_t in, std::size_t out, Rng& rng);
NormSlots add_norm(ParameterStore<float>& store, const std::string& name, const std::string& group, std::size_t width);
BlockSlots add_block(ParameterStore<float>& store, const std::string& name, const std::string& group,
                     const ViTConfig& cfg, Rng& rng);
EmbeddingSlots add_embedding(ParameterStore<float>& store, const ViTConfig& cfg, Rng& rng);

/// Tokens flowing through the encoder. Row 0 of every item is the class
/// token; row r > 0 holds original patch `patch_ids[b][r - 1]`.
template <class T>
struct TokenSequence {
  ad::Var<T> tokens;                                ///< [B, N_cur + 1, D]
  std::vector<std::vector<std::size_t>> patch_ids;  ///< [B][N_cur], ascending

  std::size_t batch() const { return patch_ids.size(); }
  std::size_t patch_count() const { return patch_ids.empty() ? 0 : patch_ids.front().size(); }
};

/// images[B, C, S, S] -> [B, N, C·P·P], patches in raster order, each patch
/// flattened channel-major then row-major.
template <class T>
BasicTensor<T> patchify(const BasicTensor<T>& images, const ViTConfig& cfg);

template <class T>
TokenSequence<T> patch_embed(ad::Tape<T>& tape, const BasicTensor<T>& images, const ViTConfig& cfg,
                             std::span<const ad::Var<T>> vars, const EmbeddingSlots& slots);

template <class T>
struct BlockOutput {
  TokenSequence<T> seq;
  BasicTensor<T> scores;  ///< [B, H, T, T] pre-softmax attention logits
  BasicTensor<T> probs;   ///< [B, H, T, T] post-softmax attention
};

/// Pre-norm block: x + MHSA(LN(x)), then x + MLP(LN(x)) with GELU.
template <class T>
BlockOutput<T> encoder_block(const TokenSequence<T>& seq, std::span<const ad::Var<T>> vars, const BlockSlots& slots,
                             const ViTConfig& cfg);

/// Linear map of the class-token embedding -> logits[B, num_classes].
template <class T>
ad::Var<T> classify(const TokenSequence<T>& seq, std::span<const ad::Var<T>> vars, const LinearSlots& head);

/// Records every parameter as a leaf on `tape`, in store order.
template <class T>
std::vector<ad::Var<T>> bind_parameters(ad::Tape<T>& tape, const ParameterStore<T>& store);

}  // namespace gft
