#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "gft/synth.hpp"
#include "gft/trainer.hpp"
#include "oracles.hpp"

using namespace gft;

namespace {

GftConfig desk_config(std::size_t classes = 4) {
  GftConfig c;
  c.vit = ViTConfig::desk();
  c.vit.num_classes = classes;
  return c;
}

std::vector<data::Sample> corpus(std::size_t n, std::size_t classes = 4) {
  data::BoundaryTask task;
  task.num_classes = classes;
  return data::to_samples(data::generate(task, n));
}

train::TrainConfig short_run(std::size_t epochs = 2) {
  train::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  return t;
}

std::vector<std::string> lines(const train::RunLog& log) {
  std::vector<std::string> out;
  for (const auto& e : log.epochs) out.push_back(train::to_json_line(e));
  return out;
}

}  // namespace

// ---- metrics ----

TEST(MetricsTest, PerfectPredictor) {
  const std::vector<std::size_t> y{0, 1, 2, 1, 0};
  const auto r = train::classification_metrics(y, y, 3);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.macro_precision, 1.0);
  EXPECT_EQ(r.macro_recall, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
}

TEST(MetricsTest, ConstantPredictorOnBalancedPair) {
  const std::vector<std::size_t> pred(4, 0), truth{0, 1, 0, 1};
  const auto r = train::classification_metrics(pred, truth, 2);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class[1].precision, 0.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 1.0 / 3.0);
}

TEST(MetricsTest, HandWorkedThreeClassCase) {
  const std::vector<std::size_t> truth{0, 0, 0, 0, 1, 1, 1, 2, 2, 2};
  const std::vector<std::size_t> pred{0, 0, 1, 2, 1, 1, 0, 2, 2, 2};
  const auto r = train::classification_metrics(pred, truth, 3);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.7);
  EXPECT_DOUBLE_EQ(r.macro_precision, 25.0 / 36.0);
  EXPECT_DOUBLE_EQ(r.macro_recall, 13.0 / 18.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 44.0 / 63.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].f1, 4.0 / 7.0);
  EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{2, 1, 1}, {1, 2, 0}, {0, 0, 3}}));
}

TEST(MetricsTest, RejectsBadInput) {
  const std::vector<std::size_t> a{0, 1}, b{0}, c{0, 5};
  EXPECT_THROW(train::classification_metrics(a, b, 2), std::invalid_argument);
  EXPECT_THROW(train::classification_metrics(std::vector<std::size_t>{}, std::vector<std::size_t>{}, 2),
               std::invalid_argument);
  EXPECT_THROW(train::classification_metrics(c, a, 2), std::invalid_argument);
}

// ---- split ----

TEST(SplitTest, PartitionSizesAndDeterminism) {
  const auto s = train::split_corpus(10, 0.25, 7);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.eval.size(), 2u);
  EXPECT_TRUE(std::is_sorted(s.eval.begin(), s.eval.end()));
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.eval.begin(), s.eval.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all[i], i);
  const auto again = train::split_corpus(10, 0.25, 7);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.eval, s.eval);
}

TEST(SplitTest, EmptyEvalReusesTraining) {
  const auto s = train::split_corpus(3, 0.0, 1);
  EXPECT_EQ(s.train.size(), 3u);
  EXPECT_EQ(s.eval.size(), 3u);
}

TEST(TrainConfigTest, Validation) {
  train::TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.learning_rate = -1;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.eval_fraction = 1.0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
}

// ---- training ----

TEST(TrainTest, ZeroLearningRateLeavesParametersUntouched) {
  auto model = make_model(desk_config(), 1);
  const auto before = model.params;
  auto states = make_states(model.config);
  auto cfg = short_run();
  cfg.learning_rate = 0.0;
  train::train(model, states, corpus(16), cfg);
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_TRUE(oracle::bit_equal(model.params[i].value, before[i].value)) << before[i].name;
}

TEST(TrainTest, FrozenKernelsNeverMove) {
  auto model = make_model(desk_config(), 1);
  const auto before = model.params;
  auto states = make_states(model.config);
  train::train(model, states, corpus(16), short_run());
  bool some_moved = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const bool same = oracle::bit_equal(model.params[i].value, before[i].value);
    if (!before[i].trainable) EXPECT_TRUE(same) << before[i].name;
    some_moved |= !same;
  }
  EXPECT_TRUE(some_moved);
}

TEST(TrainTest, SingleClassLossIsZero) {
  auto model = make_model(desk_config(1), 1);
  auto states = make_states(model.config);
  const auto log = train::train(model, states, corpus(8, 1), short_run(1));
  ASSERT_EQ(log.epochs.size(), 1u);
  EXPECT_EQ(log.epochs[0].loss, 0.0);
  EXPECT_EQ(log.epochs[0].train_accuracy, 1.0);
}

TEST(TrainTest, RepeatedRunsProduceIdenticalLogs) {
  const auto data = corpus(16);
  auto run = [&] {
    auto model = make_model(desk_config(), 5);
    auto states = make_states(model.config);
    return lines(train::train(model, states, data, short_run()));
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainTest, RecordsHaveEveryGroupAndCallbackFires) {
  auto model = make_model(desk_config(), 1);
  auto states = make_states(model.config);
  std::size_t calls = 0;
  const auto log = train::train(model, states, corpus(16), short_run(), [&](const auto& rec, const auto&, const auto& st) {
    ++calls;
    EXPECT_EQ(rec.epoch, calls);
    EXPECT_EQ(st.size(), 3u);
  });
  EXPECT_EQ(calls, 2u);
  ASSERT_EQ(log.epochs.size(), 2u);
  const auto groups = model.config.layer_groups();
  ASSERT_EQ(log.epochs[0].grad_norms.size(), groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    EXPECT_EQ(log.epochs[0].grad_norms[i].first, groups[i]);
    EXPECT_GT(log.epochs[0].grad_norms[i].second, 0.0);
  }
  EXPECT_LT(log.epochs[0].flops_pruned, log.epochs[0].flops_base);
  EXPECT_EQ(log.epochs[0].eval.stage_recall.size(), 3u);
}

TEST(TrainTest, HugeLearningRateDiverges) {
  auto model = make_model(desk_config(), 1);
  auto states = make_states(model.config);
  auto cfg = short_run(5);
  cfg.learning_rate = 1e30;
  const auto log = train::train(model, states, corpus(16), cfg);
  EXPECT_TRUE(log.diverged);
  EXPECT_EQ(log.diagnostic.rfind("non-finite", 0), 0u) << log.diagnostic;
}

TEST(TrainTest, RejectsMismatchedStatesAndLabels) {
  auto model = make_model(desk_config(2), 1);
  std::vector<gala::ImportanceState> none;
  EXPECT_THROW(train::train(model, none, corpus(8, 2), short_run()), std::invalid_argument);
  auto states = make_states(model.config);
  EXPECT_THROW(train::train(model, states, corpus(8, 4), short_run()), std::invalid_argument);
}

TEST(EvaluateTest, DoesNotDependOnBatchSize) {
  const auto model = make_model(desk_config(), 2);
  const auto data = corpus(10);
  std::vector<std::size_t> idx(10);
  for (std::size_t i = 0; i < 10; ++i) idx[i] = i;
  const auto a = train::evaluate(model, data, idx, 64), b = train::evaluate(model, data, idx, 3);
  EXPECT_EQ(a.confusion, b.confusion);
  EXPECT_NEAR(a.loss, b.loss, 1e-6);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(a.stage_recall[s], b.stage_recall[s], 1e-12);
}

// ---- run log ----

TEST(RunLogTest, JsonLineSchema) {
  train::EpochRecord rec;
  rec.epoch = 3;
  rec.grad_norms = {{"embedding", 0.5}, {"head", 2.0}};
  rec.eval.stage_recall = {0.75};
  const auto j = nlohmann::json::parse(train::to_json_line(rec));
  for (const char* key : {"epoch", "loss", "train_accuracy", "eval_loss", "eval_accuracy", "eval_macro_precision",
                          "eval_macro_recall", "eval_macro_f1", "grad_norms", "stage_recall", "flops_base",
                          "flops_pruned"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["epoch"], 3);
  EXPECT_EQ(j["grad_norms"]["head"], 2.0);
}

TEST(RunLogTest, DivergedRunEndsWithMarker) {
  const auto path = std::filesystem::temp_directory_path() / "gft_runlog_test.jsonl";
  train::RunLog log;
  log.epochs.resize(1);
  log.diverged = true;
  log.diagnostic = "non-finite loss at epoch 2, step 1";
  train::write_runlog(path, log);
  std::ifstream in(path);
  std::string first, second;
  std::getline(in, first);
  std::getline(in, second);
  const auto j = nlohmann::json::parse(second);
  EXPECT_EQ(j["diverged"], true);
  EXPECT_EQ(j["diagnostic"], log.diagnostic);
  std::filesystem::remove(path);
}
