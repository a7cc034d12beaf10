#pragma once

// Shared plumbing for the command-line tool: reading config files and data
// directories and turning them into models and environments.

#include "mansy/config.hpp"
#include "mansy/orchestrator.hpp"
#include "mansy/traces.hpp"
#include "mansy/vp_train.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace mansy::cli {

/// CSV files of a directory (or the file itself), sorted by name.
std::vector<std::filesystem::path> csv_files(const std::filesystem::path& dir_or_file);

struct VideoSetup {
  TileGrid grid;
  BitrateLadder ladder;
  double chunk_duration = 1.0;
  SimConfig sim;
  FieldOfView fov;
  int forecast_history = 5;   ///< samples fed to the forecaster without a predictor checkpoint

  /// Keys: grid, frame, ladder, chunk_duration, buffer_cap, scale, k, fov, forecast_history.
  static VideoSetup from_config(const KeyValueConfig& c);
};

/// Keys: io_heads, embed_dim, attention_heads, key_dim, value_dim, blocks,
/// history_len, horizon_len, ffn_width.
vp::PredictorConfig predictor_config(const KeyValueConfig& c);

/// Keys: epochs, batch_size, steps_per_epoch, learning_rate, clip_norm, patience.
vp::TrainOptions vp_train_options(const KeyValueConfig& c, std::uint64_t seed);

/// Keys: alpha, iterations, preference_batch, episodes_per_preference,
/// entropy_coef, discount, gae_lambda, clip, ppo_epochs, minibatch,
/// learning_rate, max_grad_norm, feature_width, hidden_width, identifier_lr,
/// identifier_epochs, identifier_minibatch.
rl::TrainingConfig training_config(const KeyValueConfig& c, const VideoSetup& video, std::uint64_t seed);

struct FamilyTraces {
  std::string family;   ///< file stem
  std::vector<ViewportTrace> traces;
};

std::vector<FamilyTraces> load_viewport_dir(const std::filesystem::path& dir, const TileGrid& frame);

/// Environments over every (manifest, bandwidth trace) pair; viewers are
/// assigned round robin over all loaded viewport traces.
struct StreamingWorld {
  std::vector<std::unique_ptr<rl::StreamingEnvironment>> owned;

  std::vector<rl::Environment*> environments() const;
};

StreamingWorld build_world(const VideoSetup& video, const std::filesystem::path& manifests,
                           const std::filesystem::path& bandwidth, const std::filesystem::path& viewports,
                           const std::filesystem::path& vp_checkpoint);

}  // namespace mansy::cli
