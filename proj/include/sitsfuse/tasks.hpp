#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sitsfuse/datamodel.hpp"
#include "sitsfuse/metrics.hpp"
#include "sitsfuse/model.hpp"

namespace sitsfuse::tasks {

struct OptimizerConfig {
  std::string kind = "adam";  // adam | sgd
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double momentum = 0.0;       // sgd only
  std::size_t step_epochs = 0;  // step decay every n epochs; 0 disables
  double gamma = 0.1;

  void validate() const;
  double lr_at(std::size_t epoch) const;
  nlohmann::json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
  fusion::Task task = fusion::Task::parcel;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::vector<int> train_folds{1, 2, 3, 4};
  int test_fold = 5;
  bool eval_each_epoch = false;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// One trainable crop parcel: pixels of one instance, VOID pixels removed.
struct ParcelRecord {
  std::size_t sample = 0;
  int parcel_id = 0;
  int label = 0;
  std::vector<std::size_t> pixels;  // flat y·W + x indices
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<MultimodalSample> samples;
  std::vector<ParcelRecord> parcels;
  fusion::Task task = fusion::Task::parcel;

  /// Number of training items: parcels or patches.
  std::size_t size() const { return task == fusion::Task::parcel ? parcels.size() : samples.size(); }
};

Dataset load_dataset(const DatasetManifest& manifest, std::span<const int> folds, fusion::Task task);

/// Normalized batch of items [begin, end) of `order`. Parcel batches sample
/// `sample_size` pixels per parcel with `rng`, the same pixels for every modality.
Batch make_batch(const Dataset& data, std::span<const std::size_t> items, std::size_t sample_size,
                 Rng& rng);

/// Keeps ⌈keep_ratio·T⌉ (at least one) uniformly drawn acquisitions of one
/// modality per sample. The draw depends only on (seed, patch id), so all
/// parcels of a patch lose the same acquisitions.
void subsample_acquisitions(Batch& batch, int modality, double keep_ratio, std::uint64_t seed);
std::size_t kept_count(std::size_t available, double keep_ratio);

class Optimizer {
 public:
  Optimizer(OptimizerConfig config, const nn::ParameterSet& params);
  void step(nn::ParameterSet& params, double lr);
  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }

  void save(const std::filesystem::path& dir, nlohmann::json& index) const;
  void load(const std::filesystem::path& dir, const nlohmann::json& index);

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor> m_, v_;
};

struct HistoryRecord {
  std::size_t epoch = 0;
  double loss = 0.0, objective = 0.0;
  std::vector<double> aux;
  double lr = 0.0;
  std::optional<double> eval_oa, eval_miou;

  nlohmann::json to_json() const;
  static HistoryRecord from_json(const nlohmann::json& j);
};

struct Checkpoint {
  ModelSpec model;
  TrainConfig train;
  std::size_t epoch = 0;  // completed epochs
  std::vector<HistoryRecord> history;
  std::vector<std::pair<std::string, Tensor>> parameters;
  std::shared_ptr<Optimizer> optimizer;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
void write_history(const std::vector<HistoryRecord>& history, const std::filesystem::path& path);

std::unique_ptr<FusionModel> restore_model(const Checkpoint& ckpt);

struct TrainHooks {
  /// Called before each optimizer step with the prepared training batch.
  std::function<void(std::size_t step, FusionModel&, const Batch&)> before_step;
  std::function<void(const HistoryRecord&)> on_epoch;
};

/// Runs epochs [start, config.epochs) where start is the resumed checkpoint's
/// epoch (or 0). Deterministic for a given seed.
Checkpoint train(const ModelSpec& spec, const TrainConfig& config, const Dataset& train_set,
                 const Dataset* eval_set = nullptr, const TrainHooks& hooks = {},
                 const Checkpoint* resume = nullptr);

struct EvalOptions {
  std::size_t batch_size = 128;
  std::size_t sample_size = 32;
  std::uint64_t seed = 0;
  /// Cloud ablation: keep ratio for modality 0 at inference.
  std::optional<double> keep_ratio;
  std::uint64_t ablation_seed = 0;
};

/// Metrics of `model` on every item of `data`, no dropout.
metrics::MetricReport evaluate(const FusionModel& model, const Dataset& data, const EvalOptions& options);

/// Class names of the report: crop classes plus "background" for semantic segmentation.
std::vector<std::string> report_class_names(const DatasetManifest& manifest, fusion::Task task);

}  // namespace sitsfuse::tasks
