#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "gft/checkpoint.hpp"
#include "gft/config.hpp"
#include "gft/fault_injection.hpp"
#include "gft/gradcheck.hpp"
#include "gft/image_io.hpp"
#include "gft/ops.hpp"
#include "gft/trainer.hpp"

namespace gft::cli {

namespace fs = std::filesystem;

namespace {

/// Failure that maps onto a specific exit code.
struct CommandError : std::runtime_error {
  CommandError(ExitCode code, const std::string& what) : std::runtime_error(what), code(code) {}
  ExitCode code;
};

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw CommandError(kUsage, "bad keep ratio list: " + text);
    out.push_back(v);
  }
  if (out.empty()) throw CommandError(kUsage, "empty keep ratio list");
  return out;
}

/// "desk" or a comma list of key=value with keys n, classes, noise, seed,
/// polarity (0/1). Geometry follows the model.
struct SynthRequest {
  std::size_t n = 480;
  std::optional<std::size_t> classes;
  std::optional<double> noise;
  std::optional<std::uint64_t> seed;
  std::optional<bool> polarity;
};

SynthRequest parse_synth(const std::string& text) {
  SynthRequest request;
  if (text == "desk" || text.empty()) return request;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw CommandError(kUsage, "bad --synth entry \"" + item + "\" (expected key=value)");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      std::size_t used = 0;
      if (key == "n") {
        request.n = std::stoul(value, &used);
      } else if (key == "classes") {
        request.classes = std::stoul(value, &used);
      } else if (key == "noise") {
        request.noise = std::stod(value, &used);
      } else if (key == "seed") {
        request.seed = std::stoull(value, &used);
      } else if (key == "polarity") {
        request.polarity = std::stoul(value, &used) != 0;
      } else {
        throw CommandError(kUsage, "unknown --synth key \"" + key + "\"");
      }
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const CommandError&) {
      throw;
    } catch (const std::exception&) {
      throw CommandError(kUsage, "bad --synth value for \"" + key + "\": " + value);
    }
  }
  return request;
}

/// Task geometry taken from the model so images and patches line up.
data::BoundaryTask synth_task(const RunConfig& cfg, const SynthRequest& request) {
  const ViTConfig& vit = cfg.model.vit;
  if (vit.channels != 1) throw CommandError(kUsage, "the synthetic task is single-channel; set model.vit.channels to 1");
  data::BoundaryTask task = cfg.synth;
  task.grid = vit.grid();
  task.patch_size = vit.patch_size;
  if (request.classes) task.num_classes = *request.classes;
  if (request.noise) task.noise = *request.noise;
  if (request.seed) task.seed = *request.seed;
  if (request.polarity) task.random_polarity = *request.polarity;
  try {
    task.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError(kUsage, e.what());
  }
  return task;
}

RunConfig base_config(const std::string& config_path, const std::string& profile_name) {
  try {
    if (!config_path.empty()) return load_run_config(config_path);
    return profile(profile_name);
  } catch (const std::invalid_argument& e) {
    throw CommandError(kUsage, e.what());
  } catch (const std::exception& e) {
    throw CommandError(kInputError, e.what());
  }
}

persist::Checkpoint open_checkpoint(const std::string& path) {
  try {
    return persist::load_checkpoint(path);
  } catch (const persist::CheckpointError& e) {
    throw CommandError(kCheckpointError, e.what());
  }
}

void print_metrics(std::ostream& out, const train::EvalReport& r) {
  out << std::fixed << std::setprecision(4);
  out << "accuracy " << r.accuracy << '\n'
      << "macro-precision " << r.macro_precision << '\n'
      << "macro-recall " << r.macro_recall << '\n'
      << "macro-f1 " << r.macro_f1 << '\n'
      << "loss " << r.loss << '\n';
  for (std::size_t c = 0; c < r.per_class.size(); ++c)
    out << "class " << c << " precision " << r.per_class[c].precision << " recall " << r.per_class[c].recall << " f1 "
        << r.per_class[c].f1 << '\n';
  for (std::size_t s = 0; s < r.stage_recall.size(); ++s)
    out << "stage " << s + 1 << " boundary-recall " << r.stage_recall[s] << '\n';
  out.unsetf(std::ios::floatfield);
}

// ---- train ----

struct TrainFlags {
  std::string config, profile = "desk", data, synth, out, log, keep_ratios;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, checkpoint_every;
  std::optional<double> lr, momentum, eval_fraction;
};

int cmd_train(const TrainFlags& f, std::ostream& out, std::ostream& err) {
  if (f.data.empty() == f.synth.empty()) throw CommandError(kUsage, "train: exactly one of --data or --synth is required");
  RunConfig cfg = base_config(f.config, f.profile);
  if (f.seed) cfg.train.seed = *f.seed;
  if (f.epochs) cfg.train.epochs = *f.epochs;
  if (f.batch_size) cfg.train.batch_size = *f.batch_size;
  if (f.checkpoint_every) cfg.train.checkpoint_every = *f.checkpoint_every;
  if (f.lr) cfg.train.learning_rate = *f.lr;
  if (f.momentum) cfg.train.momentum = *f.momentum;
  if (f.eval_fraction) cfg.train.eval_fraction = *f.eval_fraction;
  if (!f.keep_ratios.empty()) cfg.model.schedule.keep_ratios = parse_ratios(f.keep_ratios);

  std::vector<data::Sample> samples;
  if (!f.synth.empty()) {
    SynthRequest request = parse_synth(f.synth);
    if (!request.seed && f.seed) request.seed = *f.seed;
    const data::BoundaryTask task = synth_task(cfg, request);
    cfg.model.vit.num_classes = task.num_classes;
    samples = data::to_samples(data::generate(task, request.n));
  } else {
    data::Corpus corpus;
    try {
      corpus = data::load_image_dir(f.data, cfg.model.vit.image_size, cfg.model.vit.channels);
    } catch (const std::exception& e) {
      throw CommandError(kInputError, e.what());
    }
    cfg.model.vit.num_classes = corpus.class_names.size();
    samples = std::move(corpus.samples);
  }

  std::vector<std::string> warnings;
  try {
    cfg.train.validate();
    warnings = cfg.model.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError(kUsage, e.what());
  }
  for (const auto& w : warnings) err << "warning: " << w << '\n';

  GftModel<float> model = make_model(cfg.model, cfg.train.seed);
  auto states = make_states(cfg.model);
  const fs::path ckpt = f.out;
  const fs::path log_path = f.log.empty() ? fs::path(f.out + ".runlog.jsonl") : fs::path(f.log);

  const auto on_epoch = [&](const train::EpochRecord& rec, const GftModel<float>& m,
                            const std::vector<gala::ImportanceState>& s) {
    out << "epoch " << rec.epoch << " loss " << rec.loss << " train-acc " << rec.train_accuracy << " eval-acc "
        << rec.eval.accuracy << '\n';
    if (cfg.train.checkpoint_every > 0 && rec.epoch % cfg.train.checkpoint_every == 0) {
      fs::path periodic = ckpt;
      periodic += ".epoch" + std::to_string(rec.epoch);
      persist::save_checkpoint(periodic, m, s);
    }
  };
  const train::RunLog log = train::train(model, states, samples, cfg.train, on_epoch);
  train::write_runlog(log_path, log);
  if (log.diverged) {
    err << "error: training diverged: " << log.diagnostic << '\n';
    return kDiverged;
  }
  persist::save_checkpoint(ckpt, model, states);
  out << "checkpoint " << ckpt.string() << "\nrunlog " << log_path.string() << '\n';
  return kOk;
}

// ---- eval ----

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& synth, std::ostream& out) {
  if (data_dir.empty() == synth.empty()) throw CommandError(kUsage, "eval: exactly one of --data or --synth is required");
  const persist::Checkpoint ck = open_checkpoint(ckpt_path);
  const ViTConfig& vit = ck.model.config.vit;
  std::vector<data::Sample> samples;
  if (!synth.empty()) {
    RunConfig cfg;
    cfg.model = ck.model.config;
    SynthRequest request = parse_synth(synth);
    if (!request.classes) request.classes = vit.num_classes;
    samples = data::to_samples(data::generate(synth_task(cfg, request), request.n));
  } else {
    try {
      samples = data::load_image_dir(data_dir, vit.image_size, vit.channels).samples;
    } catch (const std::exception& e) {
      throw CommandError(kInputError, e.what());
    }
  }
  for (const auto& s : samples)
    if (s.label >= vit.num_classes) throw CommandError(kUsage, "eval: corpus has more classes than the model");
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  print_metrics(out, train::evaluate(ck.model, samples, all));
  return kOk;
}

// ---- gradcheck ----

struct GradcheckFlags {
  std::string ckpt, profile = "desk", fault;
  bool random = false;
  std::uint64_t seed = 0;
  std::size_t batch = 2, probes = 3;
};

int cmd_gradcheck(const GradcheckFlags& f, std::ostream& out) {
  if (f.random == !f.ckpt.empty()) throw CommandError(kUsage, "gradcheck: exactly one of --ckpt or --random is required");
  GftModel<float> model = f.random ? make_model(base_config("", f.profile).model, f.seed) : open_checkpoint(f.ckpt).model;
  const ViTConfig& vit = model.config.vit;

  Rng rng(f.seed + 1);
  Tensor images(Shape{f.batch, vit.channels, vit.image_size, vit.image_size});
  for (auto& v : images.data()) v = static_cast<float>(rng.normal());
  std::vector<std::size_t> labels(f.batch);
  for (std::size_t b = 0; b < f.batch; ++b) labels[b] = b % vit.num_classes;

  std::optional<testing::ScopedBackwardFault> fault;
  if (f.fault == "layer_norm_gain") {
    fault.emplace(testing::BackwardFault::layer_norm_gain);
  } else if (!f.fault.empty()) {
    throw CommandError(kUsage, "unknown fault \"" + f.fault + "\"");
  }

  GradcheckOptions opts;
  opts.seed = f.seed;
  opts.probes_per_tensor = f.probes;
  const GradcheckReport report = gradcheck_model(model, images, labels, opts);
  out << std::left << std::setw(12) << "layer" << std::setw(8) << "probes" << std::setw(16) << "max-rel-error"
      << std::setw(16) << "float32-dev"
      << "status\n";
  for (const auto& l : report.layers)
    out << std::setw(12) << l.group << std::setw(8) << l.probes << std::setw(16) << std::scientific
        << std::setprecision(3) << l.max_relative_error << std::setw(16) << l.max_float_deviation
        << (l.passed ? "pass" : "FAIL") << '\n'
        << std::defaultfloat;
  out << "max relative error " << std::scientific << report.max_relative_error << " (tolerance " << opts.tolerance
      << ")\n"
      << std::defaultfloat << (report.passed ? "gradcheck passed" : "gradcheck FAILED") << '\n';
  return report.passed ? kOk : kGradcheckFailed;
}

// ---- flops ----

int cmd_flops(const std::string& config_path, const std::string& profile_name, const std::string& keep_ratios,
              bool measure, std::ostream& out) {
  RunConfig cfg = base_config(config_path, profile_name);
  if (!keep_ratios.empty()) cfg.model.schedule.keep_ratios = parse_ratios(keep_ratios);
  try {
    cfg.model.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError(kUsage, e.what());
  }
  const pps::CostModel cost = pps::flops_estimate(cfg.model.vit, cfg.model.schedule);

  out << std::left << std::setw(12) << "layer" << std::setw(8) << "tokens" << std::setw(16) << "base-flops"
      << "pruned-flops\n";
  for (const auto& l : cost.layers)
    out << std::setw(12) << l.name << std::setw(8) << l.tokens << std::setw(16) << std::setprecision(6) << l.base_flops
        << l.flops << '\n';
  out << std::setprecision(10);
  out << "C_base " << cost.base_flops << '\n'
      << "direct " << cost.direct_flops << '\n'
      << "closed-form " << cost.closed_form_flops << '\n';
  out << std::fixed << std::setprecision(2) << "saved-direct " << 100.0 * cost.direct_saving() << "%\n"
      << "saved-closed-form " << 100.0 * cost.closed_form_saving() << "%\n"
      << "attention-only-bound " << 100.0 * cost.attention_only_saving << "%\n"
      << std::defaultfloat;

  if (measure) {
    GftModel<float> model = make_model(cfg.model, 0);
    const ViTConfig& vit = cfg.model.vit;
    Tensor image(Shape{1, vit.channels, vit.image_size, vit.image_size});
    Rng rng(1);
    for (auto& v : image.data()) v = static_cast<float>(rng.normal());
    MultiplyCounter counter;
    ad::Tape<float> tape;
    gft_forward(tape, model, image, nullptr);
    const double measured = 2.0 * static_cast<double>(counter.count());
    out << std::setprecision(10) << "measured " << measured << '\n'
        << std::fixed << std::setprecision(3) << "measured-vs-direct "
        << 100.0 * (measured - cost.direct_flops) / cost.direct_flops << "%\n"
        << std::defaultfloat;
  }
  return kOk;
}

// ---- heatmap ----

io::Image8 upscale(const io::Image8& src, std::size_t factor) {
  io::Image8 dst{src.width * factor, src.height * factor, src.channels, {}};
  dst.pixels.resize(dst.width * dst.height * dst.channels);
  for (std::size_t y = 0; y < dst.height; ++y)
    for (std::size_t x = 0; x < dst.width; ++x)
      for (std::size_t c = 0; c < dst.channels; ++c) dst.at(x, y, c) = src.at(x / factor, y / factor, c);
  return dst;
}

int cmd_heatmap(const std::string& ckpt_path, const std::string& image_path, const std::string& out_dir,
                std::size_t scale, std::ostream& out) {
  if (scale == 0) throw CommandError(kUsage, "heatmap: --scale must be at least 1");
  const persist::Checkpoint ck = open_checkpoint(ckpt_path);
  const ViTConfig& vit = ck.model.config.vit;
  Tensor unit;
  try {
    unit = io::read_image(image_path, vit.image_size, vit.channels);
  } catch (const std::exception& e) {
    throw CommandError(kInputError, e.what());
  }
  const Tensor images = data::standardize(unit).reshaped(Shape{1, vit.channels, vit.image_size, vit.image_size});
  ad::Tape<float> tape;
  const auto fwd = gft_forward(tape, ck.model, images, nullptr);

  fs::create_directories(out_dir);
  const std::size_t s = vit.image_size, p = vit.patch_size, grid = vit.grid();
  io::Image8 gray{s, s, 3, std::vector<std::uint8_t>(s * s * 3)};
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = 0.0;
        for (std::size_t ch = 0; ch < vit.channels; ++ch) v += unit[(ch * s + y) * s + x];
        gray.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v / vit.channels, 0.0, 1.0) * 255.0));
      }

  for (std::size_t st = 0; st < fwd.stages.size(); ++st) {
    const auto& dist = fwd.stages[st].trace.distribution;
    std::vector<double> importance(vit.num_patches(), 0.0);
    for (std::size_t i = 0; i < dist.patch_ids[0].size(); ++i) importance[dist.patch_ids[0][i]] = dist.probs[i];
    const double peak = *std::max_element(importance.begin(), importance.end());
    const auto& kept = fwd.stages[st].selection.mask.kept[0];

    io::Image8 heat{s, s, 1, std::vector<std::uint8_t>(s * s)};
    io::Image8 composite{2 * s, s, 3, std::vector<std::uint8_t>(2 * s * s * 3)};
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const std::size_t id = (y / p) * grid + x / p;
        const double level = peak > 0.0 ? importance[id] / peak : 0.0;
        heat.at(x, y) = static_cast<std::uint8_t>(std::lround(level * 255.0));
        const bool is_kept = std::binary_search(kept.begin(), kept.end(), id);
        for (std::size_t c = 0; c < 3; ++c) {
          composite.at(x, y, c) = gray.at(x, y, c);
          double v = gray.at(x, y, c) * (is_kept ? 1.0 : 0.3);
          if (c == 0) v = v + (255.0 - v) * level * 0.6;
          composite.at(s + x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
      }

    const std::string stem = "stage" + std::to_string(st + 1);
    io::write_pnm(fs::path(out_dir) / (stem + "_importance.pgm"), upscale(heat, scale));
    io::write_pnm(fs::path(out_dir) / (stem + "_composite.ppm"), upscale(composite, scale));
    std::ofstream mask(fs::path(out_dir) / (stem + "_mask.txt"));
    for (std::size_t id : kept) mask << id << '\n';
    if (!mask) throw CommandError(kFailure, "heatmap: cannot write mask file in " + out_dir);
    out << stem << " kept " << kept.size() << " of " << vit.num_patches() << '\n';
  }
  return kOk;
}

// ---- synth ----

int cmd_synth(const std::string& out_dir, std::size_t n, const data::BoundaryTask& task, std::ostream& out) {
  try {
    task.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError(kUsage, e.what());
  }
  data::export_corpus(out_dir, data::generate(task, n));
  out << "wrote " << n << " images in " << task.num_classes << " classes to " << out_dir << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gradient-focal vision transformer: train, evaluate, audit and visualize"};
  app.name("gft");
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint and run log");
  train_cmd->add_option("--config", tf.config, "JSON run configuration")->check(CLI::ExistingFile);
  train_cmd->add_option("--profile", tf.profile, "Starting configuration when no --config is given")
      ->check(CLI::IsMember({"desk", "full"}));
  train_cmd->add_option("--data", tf.data, "Directory-per-class image corpus");
  train_cmd->add_option("--synth", tf.synth, "Synthetic boundary corpus: desk or n=..,classes=..,noise=..,seed=..");
  train_cmd->add_option("--out", tf.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", tf.log, "Run log path (default <out>.runlog.jsonl)");
  train_cmd->add_option("--seed", tf.seed, "Seed for initialization, shuffling and synthetic data");
  train_cmd->add_option("--epochs", tf.epochs);
  train_cmd->add_option("--batch-size", tf.batch_size);
  train_cmd->add_option("--lr", tf.lr, "Learning rate");
  train_cmd->add_option("--momentum", tf.momentum);
  train_cmd->add_option("--eval-fraction", tf.eval_fraction);
  train_cmd->add_option("--checkpoint-every", tf.checkpoint_every, "Also save <out>.epochN every N epochs");
  train_cmd->add_option("--keep-ratios", tf.keep_ratios, "Comma-separated keep ratios, e.g. 0.75,0.5,0.25");

  std::string eval_ckpt, eval_data, eval_synth;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy and macro precision/recall/F1 of a checkpoint");
  eval_cmd->add_option("--ckpt", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data);
  eval_cmd->add_option("--synth", eval_synth);

  GradcheckFlags gf;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Backward pass vs finite differences for every layer group");
  grad_cmd->add_option("--ckpt", gf.ckpt);
  grad_cmd->add_flag("--random", gf.random, "Check a freshly initialized model");
  grad_cmd->add_option("--profile", gf.profile)->check(CLI::IsMember({"desk", "full"}));
  grad_cmd->add_option("--seed", gf.seed);
  grad_cmd->add_option("--batch", gf.batch)->check(CLI::PositiveNumber);
  grad_cmd->add_option("--probes", gf.probes, "Probed coordinates per parameter tensor")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--inject-fault", gf.fault)->group("");

  std::string flops_config, flops_profile = "desk", flops_ratios;
  bool flops_measure = false;
  auto* flops_cmd = app.add_subcommand("flops", "Matmul FLOPs with and without patch selection");
  flops_cmd->add_option("--config", flops_config)->check(CLI::ExistingFile);
  flops_cmd->add_option("--profile", flops_profile)->check(CLI::IsMember({"desk", "full"}));
  flops_cmd->add_option("--keep-ratios", flops_ratios);
  flops_cmd->add_flag("--measure", flops_measure, "Also count multiplies in one real forward pass");

  std::string heat_ckpt, heat_image, heat_out;
  std::size_t heat_scale = 1;
  auto* heat_cmd = app.add_subcommand("heatmap", "Per-stage importance maps, kept masks and overlays");
  heat_cmd->add_option("--ckpt", heat_ckpt)->required();
  heat_cmd->add_option("--image", heat_image)->required();
  heat_cmd->add_option("--out", heat_out)->required();
  heat_cmd->add_option("--scale", heat_scale, "Integer upscaling of the written images");

  std::string synth_out;
  std::size_t synth_n = 480;
  data::BoundaryTask task;
  auto* synth_cmd = app.add_subcommand("synth", "Export a planted-boundary corpus as PGM files");
  synth_cmd->add_option("--out", synth_out)->required();
  synth_cmd->add_option("--n", synth_n)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--classes", task.num_classes);
  synth_cmd->add_option("--noise", task.noise);
  synth_cmd->add_option("--seed", task.seed);
  synth_cmd->add_option("--grid", task.grid);
  synth_cmd->add_option("--patch-size", task.patch_size);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(tf, out, err);
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data, eval_synth, out);
    if (*grad_cmd) return cmd_gradcheck(gf, out);
    if (*flops_cmd) return cmd_flops(flops_config, flops_profile, flops_ratios, flops_measure, out);
    if (*heat_cmd) return cmd_heatmap(heat_ckpt, heat_image, heat_out, heat_scale, out);
    if (*synth_cmd) return cmd_synth(synth_out, synth_n, task, out);
  } catch (const CommandError& e) {
    err << "error: " << e.what() << '\n';
    if (e.code == kUsage) err << "run with --help for usage\n";
    return e.code;
  } catch (const persist::CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kCheckpointError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace gft::cli
