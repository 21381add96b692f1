#include "gft/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "gft/random.hpp"

namespace gft::train {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (epochs == 0) fail("epochs must be at least 1");
  if (batch_size == 0) fail("batch_size must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) fail("eval_fraction must lie in [0, 1)");
}

EvalReport classification_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                  std::size_t num_classes) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("classification_metrics: size mismatch");
  if (predictions.empty()) throw std::invalid_argument("classification_metrics: no items");
  EvalReport r;
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predictions[i] >= num_classes)
      throw std::invalid_argument("classification_metrics: class index out of range");
    ++r.confusion[labels[i]][predictions[i]];
    if (labels[i] == predictions[i]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  r.per_class.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t o = 0; o < num_classes; ++o) {
      predicted += r.confusion[o][c];
      actual += r.confusion[c][o];
    }
    const double tp = static_cast<double>(r.confusion[c][c]);
    ClassMetrics& m = r.per_class[c];
    m.precision = predicted == 0 ? 0.0 : tp / static_cast<double>(predicted);
    m.recall = actual == 0 ? 0.0 : tp / static_cast<double>(actual);
    m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
  }
  r.macro_precision /= static_cast<double>(num_classes);
  r.macro_recall /= static_cast<double>(num_classes);
  r.macro_f1 /= static_cast<double>(num_classes);
  return r;
}

namespace {

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = logits.ptr() + r * cols;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
  }
  return out;
}

/// Adds each stage's boundary recall for batch items with known truth.
void accumulate_recall(const ForwardResult<float>& fwd, const std::vector<data::Sample>& samples,
                       std::span<const std::size_t> batch, std::vector<double>& sums, std::size_t& count) {
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& truth = samples[batch[b]].boundary_ids;
    if (truth.empty()) continue;
    ++count;
    for (std::size_t s = 0; s < fwd.stages.size(); ++s)
      sums[s] += data::boundary_recall(fwd.stages[s].selection.mask.kept[b], truth);
  }
}

}  // namespace

EvalReport evaluate(const GftModel<float>& model, const std::vector<data::Sample>& samples,
                    std::span<const std::size_t> indices, std::size_t batch_size) {
  if (indices.empty()) throw std::invalid_argument("evaluate: no items");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch_size must be at least 1");
  std::vector<std::size_t> predictions, labels;
  std::vector<double> recall_sums(model.config.schedule.stages(), 0.0);
  std::size_t recall_count = 0;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto batch = indices.subspan(start, std::min(batch_size, indices.size() - start));
    std::vector<std::size_t> batch_labels;
    const Tensor images = data::make_batch(samples, batch, &batch_labels);
    ad::Tape<float> tape;
    const auto fwd = gft_forward(tape, model, images, nullptr, ForwardOptions{false, nullptr});
    const auto loss = ad::cross_entropy(fwd.logits, batch_labels);
    loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(batch.size());
    const auto pred = argmax_rows(fwd.logits.value());
    predictions.insert(predictions.end(), pred.begin(), pred.end());
    labels.insert(labels.end(), batch_labels.begin(), batch_labels.end());
    accumulate_recall(fwd, samples, batch, recall_sums, recall_count);
  }
  EvalReport r = classification_metrics(predictions, labels, model.config.vit.num_classes);
  r.loss = loss_sum / static_cast<double>(indices.size());
  if (recall_count > 0) {
    for (double& s : recall_sums) s /= static_cast<double>(recall_count);
    r.stage_recall = std::move(recall_sums);
  }
  return r;
}

Split split_corpus(std::size_t n, double eval_fraction, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("split_corpus: empty corpus");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  const auto n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil((1.0 - eval_fraction) * static_cast<double>(n) - 1e-9)));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, n)));
  s.eval.assign(order.begin() + static_cast<std::ptrdiff_t>(s.train.size()), order.end());
  std::sort(s.eval.begin(), s.eval.end());
  if (s.eval.empty()) {
    s.eval = s.train;
    std::sort(s.eval.begin(), s.eval.end());
  }
  return s;
}

RunLog train(GftModel<float>& model, std::vector<gala::ImportanceState>& states,
             const std::vector<data::Sample>& corpus, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  model.config.validate();
  if (states.size() != model.config.schedule.stages())
    throw std::invalid_argument("train: one importance state per GALA stage required");
  for (const auto& s : corpus)
    if (s.label >= model.config.vit.num_classes) throw std::invalid_argument("train: label exceeds num_classes");

  const Split split = split_corpus(corpus.size(), cfg.eval_fraction, cfg.seed);
  std::vector<Tensor> velocity;
  velocity.reserve(model.params.size());
  for (const auto& p : model.params) velocity.emplace_back(p.value.shape());

  const pps::CostModel cost = pps::flops_estimate(model.config.vit, model.config.schedule);
  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order = split.train;
  const float lr = static_cast<float>(cfg.learning_rate);
  const float mu = static_cast<float>(cfg.momentum);

  RunLog log;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t correct = 0, steps = 0;
    std::vector<std::pair<std::string, double>> norm_sums;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      std::vector<std::size_t> labels;
      const Tensor images = data::make_batch(corpus, batch, &labels);
      auto diverge = [&](const char* what) {
        std::ostringstream msg;
        msg << "non-finite " << what << " at epoch " << epoch << ", step " << steps + 1;
        log.diverged = true;
        log.diagnostic = msg.str();
        return log;
      };
      ad::Tape<float> tape;
      std::optional<ForwardResult<float>> fwd;
      try {
        fwd.emplace(gft_forward(tape, model, images, &states, ForwardOptions{true, nullptr}));
      } catch (const NonFiniteError&) {
        return diverge("activations");
      }
      const auto loss = ad::cross_entropy(fwd->logits, labels);
      const double loss_value = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(loss_value)) return diverge("loss");
      tape.backward(loss);

      const auto norms = per_layer_grad_norms<float>(model, fwd->params);
      if (norm_sums.empty()) {
        norm_sums = norms;
      } else {
        for (std::size_t g = 0; g < norms.size(); ++g) norm_sums[g].second += norms[g].second;
      }

      for (std::size_t i = 0; i < model.params.size(); ++i) {
        auto& p = model.params[i];
        if (!p.trainable) continue;
        const Tensor& g = fwd->params[i].grad();
        float* v = velocity[i].ptr();
        float* w = p.value.ptr();
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
          v[j] = mu * v[j] + g[j];
          w[j] -= lr * v[j];
        }
      }
      // a blown-up weight would otherwise surface as an exception in the next forward pass
      for (const auto& p : model.params)
        if (!p.value.all_finite()) return diverge("weights");

      loss_sum += loss_value * static_cast<double>(batch.size());
      const auto pred = argmax_rows(fwd->logits.value());
      for (std::size_t b = 0; b < batch.size(); ++b)
        if (pred[b] == labels[b]) ++correct;
      ++steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    for (auto& [group, value] : norm_sums) value /= static_cast<double>(steps);
    rec.grad_norms = std::move(norm_sums);
    try {
      rec.eval = evaluate(model, corpus, split.eval);
    } catch (const NonFiniteError&) {
      log.diverged = true;
      log.diagnostic = "non-finite activations in evaluation after epoch " + std::to_string(epoch);
      return log;
    }
    rec.flops_base = cost.base_flops;
    rec.flops_pruned = cost.direct_flops;
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(log.epochs.back(), model, states);
  }
  return log;
}

std::string to_json_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["loss"] = r.loss;
  j["train_accuracy"] = r.train_accuracy;
  j["eval_loss"] = r.eval.loss;
  j["eval_accuracy"] = r.eval.accuracy;
  j["eval_macro_precision"] = r.eval.macro_precision;
  j["eval_macro_recall"] = r.eval.macro_recall;
  j["eval_macro_f1"] = r.eval.macro_f1;
  nlohmann::ordered_json norms = nlohmann::ordered_json::object();
  for (const auto& [group, value] : r.grad_norms) norms[group] = value;
  j["grad_norms"] = std::move(norms);
  j["stage_recall"] = r.eval.stage_recall;
  j["flops_base"] = r.flops_base;
  j["flops_pruned"] = r.flops_pruned;
  return j.dump();
}

void write_runlog(const std::filesystem::path& path, const RunLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_runlog: cannot open " + path.string());
  for (const auto& rec : log.epochs) out << to_json_line(rec) << '\n';
  if (log.diverged) {
    nlohmann::ordered_json j;
    j["diverged"] = true;
    j["diagnostic"] = log.diagnostic;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write_runlog: write failed for " + path.string());
}

}  // namespace gft::train
