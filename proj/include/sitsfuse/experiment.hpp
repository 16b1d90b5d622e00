#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "sitsfuse/model.hpp"
#include "sitsfuse/synthgen.hpp"
#include "sitsfuse/tasks.hpp"

namespace sitsfuse {

/// Everything a run needs, read from one JSON file. A global `seed` fills the
/// seed of every part that does not set its own.
struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset;
  std::optional<synth::SynthConfig> synth;
  ModelSpec model;
  tasks::TrainConfig train;
  std::filesystem::path output;
  std::uint64_t seed = 0;

  /// Applies the global seed and task to every part.
  void set_seed(std::uint64_t s);
  void set_task(fusion::Task t);
  /// Throws ConfigError; runs before any work is done.
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Default output root: $SITSFUSE_OUT, else "runs".
std::filesystem::path output_root();

/// Loads the configured dataset, generating it from `synth` first when the
/// directory has no manifest yet. Copies class/channel layout into the model spec.
DatasetManifest prepare_dataset(ExperimentConfig& config);

}  // namespace sitsfuse
