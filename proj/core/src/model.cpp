#include "gft/model.hpp"

#include <cmath>
#include <stdexcept>

namespace gft {

std::vector<std::string> GftConfig::validate() const {
  vit.validate();
  gala.validate();
  auto warnings = schedule.validate();
  if (gala.kernel_size > vit.num_patches())
    throw std::invalid_argument("gft config: smoothing kernel longer than the patch sequence");
  return warnings;
}

std::vector<std::string> GftConfig::layer_groups() const {
  std::vector<std::string> groups{"embedding"};
  for (std::size_t i = 0; i < vit.num_base_blocks; ++i) groups.push_back("block" + std::to_string(i + 1));
  for (std::size_t i = 0; i < schedule.stages(); ++i) groups.push_back("gala" + std::to_string(i + 1));
  groups.push_back("head");
  return groups;
}

GftModel<float> make_model(const GftConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  GftModel<float> m;
  m.config = config;
  const ViTConfig& vit = config.vit;
  m.embedding = add_embedding(m.params, vit, rng);
  for (std::size_t i = 0; i < vit.num_base_blocks; ++i) {
    const std::string g = "block" + std::to_string(i + 1);
    m.base_blocks.push_back(add_block(m.params, "blocks." + std::to_string(i), g, vit, rng));
  }
  const std::size_t k = config.gala.kernel_size;
  for (std::size_t i = 0; i < config.schedule.stages(); ++i) {
    const std::string g = "gala" + std::to_string(i + 1);
    const std::string prefix = "gala." + std::to_string(i);
    m.gala_blocks.push_back(add_block(m.params, prefix, g, vit, rng));
    m.smoothing_kernels.push_back(m.params.add(prefix + ".smoothing_kernel", g,
                                               Tensor(Shape{k}, static_cast<float>(1.0 / static_cast<double>(k))),
                                               /*trainable=*/false));
  }
  m.head = add_linear(m.params, "head", "head", vit.embed_dim, vit.num_classes, rng);
  return m;
}

std::vector<gala::ImportanceState> make_states(const GftConfig& config) {
  return std::vector<gala::ImportanceState>(config.schedule.stages(),
                                            gala::ImportanceState(config.vit.num_patches()));
}

template <class T>
std::vector<pps::SelectionMask> ForwardResult<T>::masks() const {
  std::vector<pps::SelectionMask> out;
  for (const auto& s : stages) out.push_back(s.selection.mask);
  return out;
}

template <class T>
TokenSequence<T> encode_base(ad::Tape<T>& tape, const GftModel<T>& model, std::span<const ad::Var<T>> vars,
                             const BasicTensor<T>& images) {
  TokenSequence<T> seq = patch_embed(tape, images, model.config.vit, vars, model.embedding);
  for (const auto& slots : model.base_blocks) seq = encoder_block(seq, vars, slots, model.config.vit).seq;
  return seq;
}

template <class T>
StageOutput<T> run_stage(const GftModel<T>& model, std::span<const ad::Var<T>> vars, const TokenSequence<T>& seq,
                         std::size_t stage, double keep_ratio, gala::ImportanceState& state,
                         const ForwardOptions& opts) {
  const auto& cfg = model.config;
  const auto& kernel = model.params[model.smoothing_kernels.at(stage)].value;
  auto g = gala::gala_block(seq, vars, model.gala_blocks.at(stage), kernel, cfg.vit, cfg.gala, state, opts.training);

  StageOutput<T> out;
  out.block_tokens = g.block.seq;
  out.attention = std::move(g.block.probs);
  if (opts.forced_masks) {
    const auto& forced = opts.forced_masks->at(stage);
    out.selection.seq = pps::keep_patches(g.block.seq, forced.kept);
    out.selection.mask = forced;
  } else {
    out.selection = pps::select(g.block.seq, g.trace.distribution, keep_ratio, cfg.vit.num_patches(), stage);
  }
  out.trace = std::move(g.trace);
  return out;
}

template <class T>
ForwardResult<T> gft_forward(ad::Tape<T>& tape, const GftModel<T>& model, const BasicTensor<T>& images,
                             std::vector<gala::ImportanceState>* states, const ForwardOptions& opts) {
  const auto& cfg = model.config;
  if (opts.training && !states) throw std::invalid_argument("gft_forward: training requires importance states");
  if (states && states->size() != cfg.schedule.stages())
    throw std::invalid_argument("gft_forward: one importance state per stage required");
  if (opts.forced_masks && opts.forced_masks->size() != cfg.schedule.stages())
    throw std::invalid_argument("gft_forward: one forced mask per stage required");

  ForwardResult<T> result;
  result.params = bind_parameters(tape, model.params);
  TokenSequence<T> seq = encode_base(tape, model, std::span<const ad::Var<T>>(result.params), images);

  for (std::size_t s = 0; s < cfg.schedule.stages(); ++s) {
    gala::ImportanceState scratch(cfg.vit.num_patches());
    gala::ImportanceState& state = states ? (*states)[s] : scratch;
    result.gala_tokens.push_back(seq.patch_count() + 1);
    result.stages.push_back(run_stage(model, std::span<const ad::Var<T>>(result.params), seq, s,
                                      cfg.schedule.keep_ratios[s], state, opts));
    seq = result.stages.back().selection.seq;
  }
  result.logits = classify(seq, std::span<const ad::Var<T>>(result.params), model.head);
  return result;
}

template <class T>
ad::Var<T> vit_forward(ad::Tape<T>& tape, const GftModel<T>& model, const BasicTensor<T>& images) {
  const auto vars = bind_parameters(tape, model.params);
  const std::span<const ad::Var<T>> view(vars);
  TokenSequence<T> seq = encode_base(tape, model, view, images);
  for (const auto& slots : model.gala_blocks) seq = encoder_block(seq, view, slots, model.config.vit).seq;
  return classify(seq, view, model.head);
}

template <class T>
std::vector<std::pair<std::string, double>> per_layer_grad_norms(const GftModel<T>& model,
                                                                 std::span<const ad::Var<T>> vars) {
  if (vars.size() != model.params.size()) throw std::invalid_argument("per_layer_grad_norms: vars misaligned");
  std::vector<std::pair<std::string, double>> out;
  for (const auto& group : model.config.layer_groups()) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      const auto& p = model.params[i];
      if (p.group != group || !p.trainable) continue;
      for (T g : vars[i].grad().data()) sum += std::abs(static_cast<double>(g));
      count += p.value.numel();
    }
    out.emplace_back(group, count ? sum / static_cast<double>(count) : 0.0);
  }
  return out;
}

#define GFT_INSTANTIATE_MODEL(T)                                                                                   \
  template struct ForwardResult<T>;                                                                                \
  template TokenSequence<T> encode_base(ad::Tape<T>&, const GftModel<T>&, std::span<const ad::Var<T>>,             \
                                        const BasicTensor<T>&);                                                    \
  template StageOutput<T> run_stage(const GftModel<T>&, std::span<const ad::Var<T>>, const TokenSequence<T>&,      \
                                    std::size_t, double, gala::ImportanceState&, const ForwardOptions&);           \
  template ForwardResult<T> gft_forward(ad::Tape<T>&, const GftModel<T>&, const BasicTensor<T>&,                   \
                                        std::vector<gala::ImportanceState>*, const ForwardOptions&);               \
  template ad::Var<T> vit_forward(ad::Tape<T>&, const GftModel<T>&, const BasicTensor<T>&);                        \
  template std::vector<std::pair<std::string, double>> per_layer_grad_norms(const GftModel<T>&,                    \
                                                                            std::span<const ad::Var<T>>);

GFT_INSTANTIATE_MODEL(float)
GFT_INSTANTIATE_MODEL(double)

#undef GFT_INSTANTIATE_MODEL

}  // namespace gft
