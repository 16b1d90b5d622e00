#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "sitsfuse/encoders.hpp"
#include "sitsfuse/fusion.hpp"
#include "sitsfuse/heads.hpp"

namespace sitsfuse {

inline constexpr int kIgnoreTarget = -1;

struct ModelSpec {
  fusion::Task task = fusion::Task::parcel;
  fusion::FusionConfig fusion;
  enc::PixelSetConfig pse;
  enc::LtaeConfig ltae;
  enc::UtaeConfig utae;
  std::size_t decoder_hidden = 32;
  int num_classes = 6;
  std::vector<std::size_t> channels{4, 3, 3};  // per modality id
  std::vector<std::string> modality_names{"S2", "S1A", "S1D"};
  std::uint64_t seed = 0;

  /// Output width: K for parcels, K + 1 (background) for semantic segmentation.
  std::size_t output_classes() const;
  /// Rejects illegal (scheme, task, aux) combinations with a ConfigError naming the rule.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

/// Loss/metric targets of a batch: parcel classes, or per-pixel classes with
/// background mapped to K and VOID to kIgnoreTarget.
std::vector<int> batch_targets(const Batch& batch, fusion::Task task, int num_classes);

class FusionModel {
 public:
  explicit FusionModel(ModelSpec spec);
  FusionModel(const FusionModel&) = delete;
  FusionModel& operator=(const FusionModel&) = delete;

  /// Expects a normalized batch. Logits are N × output_classes().
  fusion::Prediction forward(const Batch& batch) const;

  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }
  const ModelSpec& spec() const { return spec_; }
  /// Module names used for gradient-flow grouping ("PSE-S2", "LTAE", "Decoder", ...).
  std::vector<std::string> modules() const { return params_.groups(); }

 private:
  struct Branch {
    int modality = 0;
    enc::PixelSetEncoder pse;
    enc::Ltae ltae;
    enc::Utae utae;
    heads::ClassificationHead classifier;
    heads::SegmentationHead segmenter;
    bool has_ltae = false, has_head = false;
  };

  fusion::Prediction forward_parcel(const Batch& batch) const;
  fusion::Prediction forward_semantic(const Batch& batch) const;

  ModelSpec spec_;
  nn::ParameterSet params_;
  std::vector<Branch> branches_;
  // Shared components (early: encoder on fused input; mid: temporal encoder).
  enc::PixelSetEncoder shared_pse_;
  enc::Ltae shared_ltae_;
  enc::Utae shared_utae_;
  heads::ClassificationHead classifier_;
  heads::SegmentationHead segmenter_;
  bool has_shared_head_ = false;
};

std::unique_ptr<FusionModel> build_model(const ModelSpec& spec);

}  // namespace sitsfuse
