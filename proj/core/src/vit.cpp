#include "gft/vit.hpp"

#include <stdexcept>

namespace gft {

namespace {

constexpr double kInitStd = 0.02;

Tensor truncated_normal(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.truncated_normal(kInitStd));
  return t;
}

}  // namespace

void ViTConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("vit config: " + what); };
  if (image_size == 0 || patch_size == 0 || channels == 0 || embed_dim == 0 || num_heads == 0 || mlp_ratio == 0 ||
      num_classes == 0)
    fail("all sizes must be positive");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
}

ViTConfig ViTConfig::desk() { return ViTConfig{}; }

ViTConfig ViTConfig::full() {
  ViTConfig cfg;
  cfg.image_size = 224;
  cfg.patch_size = 16;
  cfg.channels = 3;
  cfg.embed_dim = 768;
  cfg.num_heads = 12;
  cfg.num_base_blocks = 8;
  cfg.mlp_ratio = 4;
  cfg.num_classes = 100;
  return cfg;
}

template <class T>
std::size_t ParameterStore<T>::add(std::string name, std::string group, BasicTensor<T> value, bool trainable) {
  for (const auto& p : params_)
    if (p.name == name) throw std::invalid_argument("parameter store: duplicate name " + name);
  params_.push_back(Parameter<T>{std::move(name), std::move(group), std::move(value), trainable});
  return params_.size() - 1;
}

template <class T>
std::size_t ParameterStore<T>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw std::out_of_range("parameter store: no parameter named " + name);
}

template class ParameterStore<float>;
template class ParameterStore<double>;

LinearSlots add_linear(ParameterStore<float>& store, const std::string& name, const std::string& group,
                       std::size_t in, std::size_t out, Rng& rng) {
  LinearSlots s;
  s.weight = store.add(name + ".weight", group, truncated_normal(Shape{in, out}, rng));
  s.bias = store.add(name + ".bias", group, Tensor(Shape{out}));
  return s;
}

NormSlots add_norm(ParameterStore<float>& store, const std::string& name, const std::string& group,
                   std::size_t width) {
  NormSlots s;
  s.gain = store.add(name + ".gain", group, Tensor(Shape{width}, 1.0f));
  s.bias = store.add(name + ".bias", group, Tensor(Shape{width}));
  return s;
}

BlockSlots add_block(ParameterStore<float>& store, const std::string& name, const std::string& group,
                     const ViTConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.embed_dim;
  BlockSlots s;
  s.norm1 = add_norm(store, name + ".norm1", group, d);
  s.qkv = add_linear(store, name + ".attn.qkv", group, d, 3 * d, rng);
  s.proj = add_linear(store, name + ".attn.proj", group, d, d, rng);
  s.norm2 = add_norm(store, name + ".norm2", group, d);
  s.fc1 = add_linear(store, name + ".mlp.fc1", group, d, cfg.hidden_dim(), rng);
  s.fc2 = add_linear(store, name + ".mlp.fc2", group, cfg.hidden_dim(), d, rng);
  return s;
}

EmbeddingSlots add_embedding(ParameterStore<float>& store, const ViTConfig& cfg, Rng& rng) {
  EmbeddingSlots s;
  s.proj = add_linear(store, "embed.proj", "embedding", cfg.patch_dim(), cfg.embed_dim, rng);
  s.class_token = store.add("embed.class_token", "embedding", truncated_normal(Shape{cfg.embed_dim}, rng));
  s.positions =
      store.add("embed.positions", "embedding", truncated_normal(Shape{cfg.num_patches() + 1, cfg.embed_dim}, rng));
  return s;
}

template <class T>
BasicTensor<T> patchify(const BasicTensor<T>& images, const ViTConfig& cfg) {
  const std::size_t s = cfg.image_size, p = cfg.patch_size, c = cfg.channels, g = cfg.grid();
  if (images.rank() != 4 || images.dim(1) != c || images.dim(2) != s || images.dim(3) != s)
    throw std::invalid_argument("patchify: expected images [B, " + std::to_string(c) + ", " + std::to_string(s) + ", " +
                                std::to_string(s) + "], got " + images.shape().str());
  const std::size_t batch = images.dim(0), n = g * g, pd = cfg.patch_dim();
  BasicTensor<T> out(Shape{batch, n, pd});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t gy = 0; gy < g; ++gy)
      for (std::size_t gx = 0; gx < g; ++gx) {
        T* dst = out.ptr() + (b * n + gy * g + gx) * pd;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x)
              *dst++ = images[((b * c + ch) * s + gy * p + y) * s + gx * p + x];
      }
  return out;
}

template <class T>
TokenSequence<T> patch_embed(ad::Tape<T>& tape, const BasicTensor<T>& images, const ViTConfig& cfg,
                             std::span<const ad::Var<T>> vars, const EmbeddingSlots& slots) {
  BasicTensor<T> patches = patchify(images, cfg);
  const std::size_t batch = patches.dim(0), n = patches.dim(1);
  ad::Var<T> x = tape.constant(std::move(patches));
  ad::Var<T> projected = ad::linear(x, vars[slots.proj.weight], vars[slots.proj.bias]);
  ad::Var<T> with_class = ad::prepend_token(projected, vars[slots.class_token]);
  TokenSequence<T> seq;
  seq.tokens = ad::add_rows(with_class, vars[slots.positions]);
  seq.patch_ids.assign(batch, std::vector<std::size_t>(n));
  for (auto& ids : seq.patch_ids)
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return seq;
}

template <class T>
BlockOutput<T> encoder_block(const TokenSequence<T>& seq, std::span<const ad::Var<T>> vars, const BlockSlots& slots,
                             const ViTConfig& cfg) {
  const ad::Var<T> x = seq.tokens;
  ad::Var<T> h = ad::layer_norm(x, vars[slots.norm1.gain], vars[slots.norm1.bias], cfg.norm_eps);
  ad::Var<T> qkv = ad::linear(h, vars[slots.qkv.weight], vars[slots.qkv.bias]);
  ad::AttentionOutput<T> attn = ad::attention(qkv, cfg.num_heads);
  ad::Var<T> x1 = ad::add(x, ad::linear(attn.out, vars[slots.proj.weight], vars[slots.proj.bias]));

  ad::Var<T> h2 = ad::layer_norm(x1, vars[slots.norm2.gain], vars[slots.norm2.bias], cfg.norm_eps);
  ad::Var<T> mlp = ad::linear(ad::gelu(ad::linear(h2, vars[slots.fc1.weight], vars[slots.fc1.bias])),
                              vars[slots.fc2.weight], vars[slots.fc2.bias]);

  BlockOutput<T> out;
  out.seq.tokens = ad::add(x1, mlp);
  out.seq.patch_ids = seq.patch_ids;
  out.scores = std::move(attn.scores);
  out.probs = std::move(attn.probs);
  return out;
}

template <class T>
ad::Var<T> classify(const TokenSequence<T>& seq, std::span<const ad::Var<T>> vars, const LinearSlots& head) {
  return ad::linear(ad::take_row(seq.tokens, 0), vars[head.weight], vars[head.bias]);
}

template <class T>
std::vector<ad::Var<T>> bind_parameters(ad::Tape<T>& tape, const ParameterStore<T>& store) {
  std::vector<ad::Var<T>> vars;
  vars.reserve(store.size());
  for (const auto& p : store) vars.push_back(tape.leaf(p.value, p.trainable));
  return vars;
}

#define GFT_INSTANTIATE_VIT(T)                                                                                     \
  template BasicTensor<T> patchify(const BasicTensor<T>&, const ViTConfig&);                                       \
  template TokenSequence<T> patch_embed(ad::Tape<T>&, const BasicTensor<T>&, const ViTConfig&,                     \
                                        std::span<const ad::Var<T>>, const EmbeddingSlots&);                       \
  template BlockOutput<T> encoder_block(const TokenSequence<T>&, std::span<const ad::Var<T>>, const BlockSlots&,   \
                                        const ViTConfig&);                                                         \
  template ad::Var<T> classify(const TokenSequence<T>&, std::span<const ad::Var<T>>, const LinearSlots&);          \
  template std::vector<ad::Var<T>> bind_parameters(ad::Tape<T>&, const ParameterStore<T>&);

GFT_INSTANTIATE_VIT(float)
GFT_INSTANTIATE_VIT(double)

#undef GFT_INSTANTIATE_VIT

}  // namespace gft
