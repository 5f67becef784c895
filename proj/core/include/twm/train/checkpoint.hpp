#pragma once

#include <filesystem>
#include <memory>

#include "twm/train/trainer.hpp"

namespace twm {

enum class CheckpointParts {
  kAll,
  /// Encoder ("enc.*") and actor ("actor.*") only; the rest keeps its
  /// initialization and no optimizer state is read.
  kEncoderActor,
};

struct Checkpoint {
  std::unique_ptr<Models> models;
  RunCounters counters;
  CheckpointParts parts = CheckpointParts::kAll;
};

/// TWM1 file: magic, version, canonical config text, run counters, named
/// parameter blobs (name, shape, little-endian f32), then Adam moments and
/// step counters per parameter set.
void save_checkpoint(const std::filesystem::path& path, const Models& models, const RunCounters& counters);
Checkpoint load_checkpoint(const std::filesystem::path& path, CheckpointParts parts = CheckpointParts::kAll);
/// Config echoed in the checkpoint header.
TrainConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace twm
