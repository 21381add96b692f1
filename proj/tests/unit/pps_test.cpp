#include <gtest/gtest.h>

#include <vector>

#include "gft/pps.hpp"
#include "gft/vit.hpp"
#include "oracles.hpp"

using namespace gft;

// ---- keep counts ----

TEST(KeepCountTest, PaperRatiosOn196Patches) {
  EXPECT_EQ(pps::keep_count(0.75, 196), 147u);
  EXPECT_EQ(pps::keep_count(0.50, 196), 98u);
  EXPECT_EQ(pps::keep_count(0.25, 196), 49u);
}

TEST(KeepCountTest, DeskRatiosOn16Patches) {
  EXPECT_EQ(pps::keep_count(0.75, 16), 12u);
  EXPECT_EQ(pps::keep_count(0.50, 16), 8u);
  EXPECT_EQ(pps::keep_count(0.25, 16), 4u);
}

TEST(KeepCountTest, FloorWithSlackAndMinimumOne) {
  EXPECT_EQ(pps::keep_count(0.29, 100), 29u);  // 0.29·100 = 28.999999999999996
  EXPECT_EQ(pps::keep_count(0.999, 10), 9u);
  EXPECT_EQ(pps::keep_count(0.01, 16), 1u);
  EXPECT_EQ(pps::keep_count(1.0, 16), 16u);
}

TEST(StageTokenCountsTest, ClassTokenCarriedThroughout) {
  EXPECT_EQ(pps::stage_token_counts(196, {}), (std::vector<std::size_t>{197, 148, 99, 50}));
  EXPECT_EQ(pps::stage_token_counts(16, {}), (std::vector<std::size_t>{17, 13, 9, 5}));
}

TEST(ScheduleTest, Validation) {
  EXPECT_TRUE(pps::SelectionSchedule{}.validate().empty());
  EXPECT_THROW((pps::SelectionSchedule{{}}).validate(), std::invalid_argument);
  EXPECT_THROW((pps::SelectionSchedule{{0.5, 0.0}}).validate(), std::invalid_argument);
  EXPECT_THROW((pps::SelectionSchedule{{1.5}}).validate(), std::invalid_argument);
  EXPECT_EQ((pps::SelectionSchedule{{0.25, 0.5}}).validate().size(), 1u);
}

// ---- selection ----

namespace {

TokenSequence<double> sequence(ad::Tape<double>& tape, std::vector<std::vector<std::size_t>> ids, std::size_t width) {
  const std::size_t batch = ids.size(), n = ids.front().size();
  Tensor64 v(Shape{batch, n + 1, width});
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = static_cast<double>(i);
  return {tape.leaf(v), std::move(ids)};
}

gala::ImportanceDistribution<double> distribution(std::vector<std::vector<double>> rows,
                                                  std::vector<std::vector<std::size_t>> ids) {
  gala::ImportanceDistribution<double> d;
  std::vector<double> flat;
  for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  d.probs = Tensor64(Shape{rows.size(), rows.front().size()}, flat);
  d.patch_ids = std::move(ids);
  return d;
}

}  // namespace

TEST(SelectTest, KeepsHighestProbabilityPatchesPerItem) {
  ad::Tape<double> tape;
  auto seq = sequence(tape, {{0, 1, 2, 3}, {0, 1, 2, 3}}, 2);
  auto d = distribution({{0.1, 0.4, 0.2, 0.3}, {0.5, 0.1, 0.3, 0.1}}, seq.patch_ids);
  auto sel = pps::select(seq, d, 0.5, 4, 1);
  EXPECT_EQ(sel.mask.stage, 1u);
  EXPECT_EQ(sel.mask.kept, (std::vector<std::vector<std::size_t>>{{1, 3}, {0, 2}}));
  EXPECT_EQ(sel.seq.patch_ids, sel.mask.kept);
  // class row then rows of patches 1 and 3 of item 0
  const auto& v = sel.seq.tokens.value();
  ASSERT_EQ(v.shape(), (Shape{2, 3, 2}));
  EXPECT_EQ(v.at({0, 0, 0}), 0.0);
  EXPECT_EQ(v.at({0, 1, 0}), 4.0);
  EXPECT_EQ(v.at({0, 2, 0}), 8.0);
  EXPECT_EQ(v.at({1, 1, 0}), 12.0);
}

TEST(SelectTest, TiesBreakTowardLowerOriginalId) {
  ad::Tape<double> tape;
  auto seq = sequence(tape, {{2, 5, 7, 9}}, 1);
  auto d = distribution({{0.25, 0.25, 0.25, 0.25}}, seq.patch_ids);
  EXPECT_EQ(pps::select(seq, d, 0.25, 8, 0).mask.kept[0], (std::vector<std::size_t>{2, 5}));
}

TEST(SelectTest, CountsAreRelativeToOriginalPatchesAndClamped) {
  ad::Tape<double> tape;
  auto seq = sequence(tape, {{1, 4, 6}}, 1);
  auto d = distribution({{0.2, 0.5, 0.3}}, seq.patch_ids);
  EXPECT_EQ(pps::select(seq, d, 0.25, 8, 0).mask.kept[0], (std::vector<std::size_t>{4, 6}));
  EXPECT_EQ(pps::select(seq, d, 0.75, 8, 0).mask.kept[0], (std::vector<std::size_t>{1, 4, 6}));
}

TEST(KeepPatchesTest, RejectsIdsNotPresent) {
  ad::Tape<double> tape;
  auto seq = sequence(tape, {{1, 4, 6}}, 1);
  EXPECT_THROW(pps::keep_patches(seq, {{2}}), std::invalid_argument);
}

// ---- cost model ----

TEST(CostModelTest, ClosedFormExample) {
  const std::vector<double> alphas{0.2, 0.2, 0.2}, ratios{0.75, 0.5, 0.25};
  EXPECT_DOUBLE_EQ(pps::closed_form_cost(1.0, alphas, ratios), 0.70);
}

TEST(CostModelTest, BlockFlopsFormula) {
  ViTConfig cfg;  // d = 64, hidden = 256
  const double t = 17, d = 64, h = 256;
  EXPECT_DOUBLE_EQ(pps::block_flops(17, cfg), 2 * (t * d * 3 * d + 2 * t * t * d + t * d * d + 2 * t * d * h));
}

TEST(CostModelTest, NoOpScheduleSavesNothing) {
  auto cost = pps::flops_estimate(ViTConfig::desk(), pps::SelectionSchedule{{1.0, 1.0, 1.0}});
  EXPECT_EQ(cost.direct_flops, cost.base_flops);
  EXPECT_DOUBLE_EQ(cost.closed_form_flops, cost.base_flops);
  EXPECT_EQ(cost.direct_saving(), 0.0);
}

TEST(CostModelTest, FullProfileSavingAboveAttentionOnlyBound) {
  auto cost = pps::flops_estimate(ViTConfig::full(), pps::SelectionSchedule{});
  EXPECT_GT(cost.direct_saving(), 0.0);
  // Independent bound from the token counts alone: only the two T² products shrink.
  const double d = 768;
  const std::vector<double> tokens{197, 148, 99};
  double bound = 0.0;
  for (double t : tokens) bound += 4 * d * (197 * 197 - t * t);
  bound /= cost.base_flops;
  EXPECT_NEAR(cost.attention_only_saving, bound, 1e-12);
  EXPECT_GE(cost.direct_saving(), bound);
}

TEST(CostModelTest, AlphasAreBaseShares) {
  const ViTConfig cfg = ViTConfig::desk();
  auto cost = pps::flops_estimate(cfg, pps::SelectionSchedule{});
  ASSERT_EQ(cost.alphas.size(), 3u);
  const double share = pps::block_flops(17, cfg) / cost.base_flops;
  EXPECT_DOUBLE_EQ(cost.alphas[0], share);
  EXPECT_DOUBLE_EQ(cost.alphas[1], share);
  EXPECT_EQ(cost.alphas[2], 0.0);
}

TEST(CostModelTest, DirectSumEqualsLayerSum) {
  auto cost = pps::flops_estimate(ViTConfig::desk(), pps::SelectionSchedule{});
  double base = 0, pruned = 0;
  for (const auto& l : cost.layers) {
    base += l.base_flops;
    pruned += l.flops;
  }
  EXPECT_DOUBLE_EQ(base, cost.base_flops);
  EXPECT_DOUBLE_EQ(pruned, cost.direct_flops);
}
