#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gft/model.hpp"
#include "gft/synth.hpp"

namespace gft::train {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 7;
  double eval_fraction = 0.25;
  std::size_t checkpoint_every = 0;  ///< epochs between checkpoints; 0 = final only

  void validate() const;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  ///< [truth][predicted]
  double loss = 0.0;
  /// Mean boundary recall of each stage's kept set, over samples with known
  /// boundary ids (empty when none are known).
  std::vector<double> stage_recall;
};

/// Accuracy and macro-averaged precision/recall/F1. A class that is never
/// predicted has precision 0; a class absent from `labels` has recall 0.
EvalReport classification_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                  std::size_t num_classes);

/// Evaluation-mode pass (importance state frozen) over `indices` of `samples`.
EvalReport evaluate(const GftModel<float>& model, const std::vector<data::Sample>& samples,
                    std::span<const std::size_t> indices, std::size_t batch_size = 64);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  EvalReport eval;
  std::vector<std::pair<std::string, double>> grad_norms;  ///< depth order, averaged over the epoch's steps
  double flops_base = 0.0;
  double flops_pruned = 0.0;
};

struct RunLog {
  std::vector<EpochRecord> epochs;
  bool diverged = false;
  std::string diagnostic;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

/// Seeded permutation; the first ceil((1 - eval_fraction)·n) go to training.
/// With no evaluation items left over, evaluation reuses the training items.
Split split_corpus(std::size_t n, double eval_fraction, std::uint64_t seed);

using EpochCallback =
    std::function<void(const EpochRecord&, const GftModel<float>&, const std::vector<gala::ImportanceState>&)>;

/// Mini-batch cross-entropy with SGD + momentum (v ← μv + g, θ ← θ - ηv).
/// Stops early and marks the log diverged on a non-finite loss, weight or
/// activation.
RunLog train(GftModel<float>& model, std::vector<gala::ImportanceState>& states,
             const std::vector<data::Sample>& corpus, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// One JSON object per line.
std::string to_json_line(const EpochRecord& record);
void write_runlog(const std::filesystem::path& path, const RunLog& log);

}  // namespace gft::train
