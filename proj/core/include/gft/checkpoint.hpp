#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gft/model.hpp"

namespace gft::persist {

inline constexpr char kMagic[8] = {'G', 'F', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class CheckpointErrorKind { io, bad_magic, version_mismatch, truncated, checksum_mismatch, malformed };

const char* to_string(CheckpointErrorKind kind);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string("checkpoint: ") + to_string(kind) + ": " + detail), kind_(kind) {}

  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

struct Checkpoint {
  GftModel<float> model;
  std::vector<gala::ImportanceState> states;
};

/// Single-file layout, little-endian throughout; see docs/checkpoint-format.md.
std::vector<std::uint8_t> serialize(const GftModel<float>& model, const std::vector<gala::ImportanceState>& states);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

/// Writes to a temporary sibling and renames, so a crash never leaves a
/// half-written file under `path`.
void save_checkpoint(const std::filesystem::path& path, const GftModel<float>& model,
                     const std::vector<gala::ImportanceState>& states);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gft::persist
