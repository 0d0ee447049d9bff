#pragma once

// Training configuration plus its two external forms: the key=value text
// file read by the CLI and the JSON snapshot stored in checkpoints.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "sara/model.hpp"
#include "sara/objectives.hpp"

namespace sara {

struct TrainConfig {
  int epochs = 8;
  int max_steps = 0;  // 0: run all epochs
  int batch_size = 1;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  double lr_g = 1e-4;
  double lr_d = 4e-4;
  std::uint64_t seed = 1;
  loss::LossWeights weights;
  loss::Reduction reduction = loss::Reduction::mean;
  loss::CorrMode corr_mode = loss::CorrMode::transpose;
  bool no_sam = false;
  bool no_ram = false;
  bool no_identity = false;
  bool occluder = false;
  int checkpoint_interval = 0;  // steps; 0 disables intermediate checkpoints
  int power_iterations = 1;     // spectral-norm refinement after each update
  ModelConfig model;

  /// Weights actually applied (identity weight zeroed under no_identity).
  loss::LossWeights effective_weights() const;
  ForwardOptions forward_options() const;
  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

/// Returns `cfg` with one ablation switch turned on: no_sam | no_ram |
/// no_identity. Unknown flags throw ArgumentError.
TrainConfig ablate(TrainConfig cfg, const std::string& flag);

/// Applies one `key=value` setting; unknown keys throw ConfigError.
void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Reads `key=value` lines; blank lines and text after '#' are ignored.
std::map<std::string, std::string> read_settings(const std::filesystem::path& path);
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace sara
