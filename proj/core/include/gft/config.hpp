#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "gft/model.hpp"
#include "gft/synth.hpp"
#include "gft/trainer.hpp"

namespace gft {

/// Everything a run needs. Serialized as one JSON object with the sections
/// "model" (vit, gala, schedule), "train" and "synth"; every key is optional
/// and unknown keys are rejected.
struct RunConfig {
  GftConfig model;
  train::TrainConfig train;
  data::BoundaryTask synth;
};

nlohmann::ordered_json to_json(const GftConfig& config);
GftConfig gft_config_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Throws std::runtime_error for unreadable files or malformed JSON, and
/// std::invalid_argument for unknown keys or wrongly typed values.
RunConfig load_run_config(const std::filesystem::path& path);

/// Named starting points: "desk" and "full".
RunConfig profile(const std::string& name);

}  // namespace gft
