#include "gft/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace gft {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

/// Reads the keys of one JSON object into fields, rejecting unknown keys.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw std::invalid_argument("config: \"" + name_ + "\" must be an object");
  }

  template <class V>
  void get(const char* key, V& out) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<V> && !std::is_same_v<V, bool>) {
        if (!it->is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!it->is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<V, bool>) {
        if (!it->is_boolean()) throw std::invalid_argument("expected a boolean");
      }
      out = it->get<V>();
    } catch (const std::exception& e) {
      throw std::invalid_argument("config: " + name_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    known_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!known_.count(it.key())) throw std::invalid_argument("config: unknown key " + name_ + "." + it.key());
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> known_;
};

void read_vit(const json& j, ViTConfig& v) {
  Section s(j, "model.vit");
  s.get("image_size", v.image_size);
  s.get("patch_size", v.patch_size);
  s.get("channels", v.channels);
  s.get("embed_dim", v.embed_dim);
  s.get("num_heads", v.num_heads);
  s.get("num_base_blocks", v.num_base_blocks);
  s.get("mlp_ratio", v.mlp_ratio);
  s.get("num_classes", v.num_classes);
  s.get("norm_eps", v.norm_eps);
  s.finish();
}

void read_gala(const json& j, gala::GalaParams& g) {
  Section s(j, "model.gala");
  s.get("kernel_size", g.kernel_size);
  s.get("temperature", g.temperature);
  s.get("ema_decay", g.ema_decay);
  s.get("norm_epsilon", g.norm_epsilon);
  s.finish();
}

void read_model(const json& j, GftConfig& c) {
  Section s(j, "model");
  if (const json* v = s.child("vit")) read_vit(*v, c.vit);
  if (const json* g = s.child("gala")) read_gala(*g, c.gala);
  s.get("keep_ratios", c.schedule.keep_ratios);
  s.finish();
}

void read_train(const json& j, train::TrainConfig& t) {
  Section s(j, "train");
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("learning_rate", t.learning_rate);
  s.get("momentum", t.momentum);
  s.get("seed", t.seed);
  s.get("eval_fraction", t.eval_fraction);
  s.get("checkpoint_every", t.checkpoint_every);
  s.finish();
}

void read_synth(const json& j, data::BoundaryTask& b) {
  Section s(j, "synth");
  s.get("grid", b.grid);
  s.get("patch_size", b.patch_size);
  s.get("num_classes", b.num_classes);
  s.get("noise", b.noise);
  s.get("low_level", b.low_level);
  s.get("high_level", b.high_level);
  s.get("random_polarity", b.random_polarity);
  s.get("seed", b.seed);
  s.finish();
}

}  // namespace

ordered_json to_json(const GftConfig& c) {
  ordered_json vit{{"image_size", c.vit.image_size},   {"patch_size", c.vit.patch_size},
                   {"channels", c.vit.channels},       {"embed_dim", c.vit.embed_dim},
                   {"num_heads", c.vit.num_heads},     {"num_base_blocks", c.vit.num_base_blocks},
                   {"mlp_ratio", c.vit.mlp_ratio},     {"num_classes", c.vit.num_classes},
                   {"norm_eps", c.vit.norm_eps}};
  ordered_json gala{{"kernel_size", c.gala.kernel_size},
                    {"temperature", c.gala.temperature},
                    {"ema_decay", c.gala.ema_decay},
                    {"norm_epsilon", c.gala.norm_epsilon}};
  return ordered_json{{"vit", vit}, {"gala", gala}, {"keep_ratios", c.schedule.keep_ratios}};
}

GftConfig gft_config_from_json(const json& j) {
  GftConfig c;
  read_model(j, c);
  return c;
}

ordered_json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& b = c.synth;
  return ordered_json{
      {"model", to_json(c.model)},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"momentum", t.momentum},
        {"seed", t.seed},
        {"eval_fraction", t.eval_fraction},
        {"checkpoint_every", t.checkpoint_every}}},
      {"synth",
       {{"grid", b.grid},
        {"patch_size", b.patch_size},
        {"num_classes", b.num_classes},
        {"noise", b.noise},
        {"low_level", b.low_level},
        {"high_level", b.high_level},
        {"random_polarity", b.random_polarity},
        {"seed", b.seed}}}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section s(j, "config");
  if (const json* m = s.child("model")) read_model(*m, c.model);
  if (const json* t = s.child("train")) read_train(*t, c.train);
  if (const json* b = s.child("synth")) read_synth(*b, c.synth);
  s.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config: " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

RunConfig profile(const std::string& name) {
  RunConfig c;
  if (name == "desk") {
    c.model.vit = ViTConfig::desk();
  } else if (name == "full") {
    c.model.vit = ViTConfig::full();
  } else {
    throw std::invalid_argument("unknown profile \"" + name + "\" (expected desk or full)");
  }
  return c;
}

}  // namespace gft
