#include "gft/pps.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gft/ops.hpp"

namespace gft::pps {

std::vector<std::string> SelectionSchedule::validate() const {
  if (keep_ratios.empty()) throw std::invalid_argument("selection schedule: at least one stage required");
  std::vector<std::string> warnings;
  for (std::size_t i = 0; i < keep_ratios.size(); ++i) {
    const double k = keep_ratios[i];
    if (!(k > 0.0 && k <= 1.0))
      throw std::invalid_argument("selection schedule: keep ratio " + std::to_string(k) + " outside (0, 1]");
    if (i > 0 && k > keep_ratios[i - 1])
      warnings.push_back("selection schedule: stage " + std::to_string(i + 1) + " keeps more than stage " +
                         std::to_string(i) + "; the larger count is clamped to the surviving patches");
  }
  return warnings;
}

std::size_t keep_count(double ratio, std::size_t original) {
  const double raw = std::floor(ratio * static_cast<double>(original) + 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::max(raw, 0.0)));
}

template <class T>
TokenSequence<T> keep_patches(const TokenSequence<T>& seq, const std::vector<std::vector<std::size_t>>& kept_ids) {
  if (kept_ids.size() != seq.batch()) throw std::invalid_argument("keep_patches: one id list per batch item required");
  std::vector<std::vector<std::size_t>> rows(seq.batch());
  for (std::size_t b = 0; b < seq.batch(); ++b) {
    const auto& present = seq.patch_ids[b];
    if (kept_ids[b].empty()) throw std::invalid_argument("keep_patches: empty patch set");
    if (!std::is_sorted(kept_ids[b].begin(), kept_ids[b].end()) ||
        std::adjacent_find(kept_ids[b].begin(), kept_ids[b].end()) != kept_ids[b].end())
      throw std::invalid_argument("keep_patches: ids must be unique and ascending");
    rows[b].push_back(0);
    for (std::size_t id : kept_ids[b]) {
      auto it = std::lower_bound(present.begin(), present.end(), id);
      if (it == present.end() || *it != id)
        throw std::invalid_argument("keep_patches: patch " + std::to_string(id) + " was already dropped");
      rows[b].push_back(static_cast<std::size_t>(it - present.begin()) + 1);
    }
  }
  TokenSequence<T> out;
  out.tokens = ad::gather_rows(seq.tokens, rows);
  out.patch_ids = kept_ids;
  return out;
}

template <class T>
Selection<T> select(const TokenSequence<T>& seq, const gala::ImportanceDistribution<T>& dist, double keep_ratio,
                    std::size_t original_patches, std::size_t stage) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw std::invalid_argument("select: keep ratio outside (0, 1]");
  const std::size_t n_cur = seq.patch_count();
  if (n_cur == 0) throw std::invalid_argument("select: empty patch set");
  if (dist.patch_ids != seq.patch_ids) throw std::invalid_argument("select: distribution not aligned with tokens");
  if (dist.probs.rank() != 2 || dist.probs.dim(0) != seq.batch() || dist.probs.dim(1) != n_cur)
    throw std::invalid_argument("select: distribution shape " + dist.probs.shape().str() + " mismatches tokens");
  const std::size_t count = std::min(keep_count(keep_ratio, original_patches), n_cur);

  Selection<T> result;
  result.mask.stage = stage;
  result.mask.kept.resize(seq.batch());
  for (std::size_t b = 0; b < seq.batch(); ++b) {
    std::span<const T> row(dist.probs.ptr() + b * n_cur, n_cur);
    for (std::size_t pos : ops::topk_indices(row, count)) result.mask.kept[b].push_back(seq.patch_ids[b][pos]);
  }
  result.seq = keep_patches(seq, result.mask.kept);
  return result;
}

double closed_form_cost(double base, std::span<const double> alphas, std::span<const double> keep_ratios) {
  if (alphas.size() != keep_ratios.size()) throw std::invalid_argument("closed_form_cost: one alpha per stage");
  double reduction = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) reduction += alphas[i] * (1.0 - keep_ratios[i]);
  return base * (1.0 - reduction);
}

double block_flops(std::size_t tokens, const ViTConfig& cfg) {
  const double t = static_cast<double>(tokens);
  const double d = static_cast<double>(cfg.embed_dim);
  const double hidden = static_cast<double>(cfg.hidden_dim());
  const double macs = t * d * 3.0 * d     // qkv projection
                      + 2.0 * t * t * d   // QKᵀ and attention · V
                      + t * d * d         // output projection
                      + 2.0 * t * d * hidden;  // MLP
  return 2.0 * macs;
}

std::vector<std::size_t> stage_token_counts(std::size_t num_patches, const SelectionSchedule& schedule) {
  std::vector<std::size_t> counts{num_patches + 1};
  std::size_t current = num_patches;
  for (double k : schedule.keep_ratios) {
    current = std::min(keep_count(k, num_patches), current);
    counts.push_back(current + 1);
  }
  return counts;
}

CostModel flops_estimate(const ViTConfig& cfg, const SelectionSchedule& schedule) {
  schedule.validate();
  auto counts = stage_token_counts(cfg.num_patches(), schedule);
  counts.pop_back();
  return flops_estimate(cfg, counts, schedule.keep_ratios);
}

CostModel flops_estimate(const ViTConfig& cfg, std::span<const std::size_t> gala_tokens,
                         std::span<const double> keep_ratios) {
  if (gala_tokens.size() != keep_ratios.size())
    throw std::invalid_argument("flops_estimate: one token count per GALA stage required");
  const std::size_t n = cfg.num_patches();
  const std::size_t full = n + 1;
  const double d = static_cast<double>(cfg.embed_dim);

  CostModel m;
  m.keep_ratios.assign(keep_ratios.begin(), keep_ratios.end());
  const double embed = 2.0 * static_cast<double>(n) * static_cast<double>(cfg.patch_dim()) * d;
  m.layers.push_back({"embedding", n, embed, embed});
  for (std::size_t i = 0; i < cfg.num_base_blocks; ++i)
    m.layers.push_back({"block" + std::to_string(i + 1), full, block_flops(full, cfg), block_flops(full, cfg)});
  for (std::size_t i = 0; i < gala_tokens.size(); ++i) {
    if (gala_tokens[i] < 2 || gala_tokens[i] > full)
      throw std::invalid_argument("flops_estimate: GALA token count out of range");
    m.layers.push_back(
        {"gala" + std::to_string(i + 1), gala_tokens[i], block_flops(full, cfg), block_flops(gala_tokens[i], cfg)});
  }
  const double head = 2.0 * d * static_cast<double>(cfg.num_classes);
  m.layers.push_back({"head", 1, head, head});

  double quadratic_saved = 0.0;
  for (const auto& layer : m.layers) {
    m.base_flops += layer.base_flops;
    m.direct_flops += layer.flops;
    if (layer.name.rfind("gala", 0) == 0) {
      const double t = static_cast<double>(layer.tokens);
      const double tf = static_cast<double>(full);
      quadratic_saved += 2.0 * 2.0 * d * (tf * tf - t * t);
    }
  }
  m.attention_only_saving = quadratic_saved / m.base_flops;

  // Selection after stage i shrinks the block of stage i + 1; the final
  // selection only feeds the class-token head, whose cost is fixed.
  const std::size_t first_gala = 1 + cfg.num_base_blocks;
  for (std::size_t i = 0; i < gala_tokens.size(); ++i) {
    const bool shrinks_next = i + 1 < gala_tokens.size();
    m.alphas.push_back(shrinks_next ? m.layers[first_gala + i + 1].base_flops / m.base_flops : 0.0);
  }
  m.closed_form_flops = closed_form_cost(m.base_flops, m.alphas, m.keep_ratios);
  return m;
}

template TokenSequence<float> keep_patches(const TokenSequence<float>&, const std::vector<std::vector<std::size_t>>&);
template TokenSequence<double> keep_patches(const TokenSequence<double>&,
                                            const std::vector<std::vector<std::size_t>>&);
template Selection<float> select(const TokenSequence<float>&, const gala::ImportanceDistribution<float>&, double,
                                 std::size_t, std::size_t);
template Selection<double> select(const TokenSequence<double>&, const gala::ImportanceDistribution<double>&, double,
                                  std::size_t, std::size_t);

}  // namespace gft::pps
