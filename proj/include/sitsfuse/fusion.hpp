#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sitsfuse/autodiff.hpp"
#include "sitsfuse/datamodel.hpp"
#include "sitsfuse/rng.hpp"

namespace sitsfuse::fusion {

/// `single` is a one-modality model without fusion (the S2/S1A/S1D rows).
enum class Scheme { single, early, mid, late, decision };
enum class Task { parcel, semantic };
enum class Phase { train, eval };

std::string to_string(Scheme s);
std::string to_string(Task t);
Scheme scheme_from_string(const std::string& s);
Task task_from_string(const std::string& s);

struct FusionConfig {
  Scheme scheme = Scheme::late;
  std::vector<int> modalities{0, 1, 2};  // modality ids consumed, in channel/concat order
  bool aux_enabled = false;
  std::vector<double> lambda{0.5, 0.5, 0.5};   // indexed by modality id
  bool temporal_dropout = false;
  std::vector<double> dropout{0.4, 0.2, 0.2};  // indexed by modality id
  int target_modality = 0;                     // early fusion interpolates onto its dates

  /// Throws ConfigError on malformed values or illegal combinations.
  void validate(std::size_t modality_count) const;
  nlohmann::json to_json() const;
  static FusionConfig from_json(const nlohmann::json& j);
};

/// Piecewise-linear interpolation over day of year, clamped at both ends.
ModalitySeries interpolate_to_dates(const ModalitySeries& series, std::span<const int> target_dates);

/// All modalities interpolated onto the target modality's dates, channels concatenated
/// in the order of `config.modalities`.
ModalitySeries early_fuse(const MultimodalSample& sample, const FusionConfig& config);

/// Batch version: for every sample only unmasked acquisitions are used, both as
/// interpolation sources and as targets. The result carries the target's mask.
ModalityBatch early_fuse(const Batch& batch, std::span<const int> modalities, int target_modality);

struct MergedSequence {
  ad::Var sequence;  // B × T* × F, real positions first in chronological order
  std::vector<int> dates;
  std::vector<std::uint8_t> mask;
  std::size_t time = 0;  // T* = Σ T_max^m
};

/// Chronological merge of per-modality feature sequences (B × T_m × F),
/// ties broken by position in `sources`.
MergedSequence mid_fuse(const std::vector<ad::Var>& sequences,
                        const std::vector<const ModalityBatch*>& sources);

ad::Var late_fuse(const std::vector<ad::Var>& embeddings);

/// log of the mean of per-modality softmax probabilities.
ad::Var decision_fuse(const std::vector<ad::Var>& logits);

/// Masks acquisitions of modality m with probability p[m] in the train phase;
/// never leaves a sample without an acquisition. Identity in the eval phase.
Batch temporal_dropout(Batch batch, std::span<const double> p, Rng& rng, Phase phase);

struct Prediction {
  ad::Var logits;                 // N × classes (log-probabilities for decision fusion)
  std::vector<ad::Var> aux;       // per consumed modality when aux heads exist
  std::vector<int> aux_modality;  // modality id of each aux entry
};

struct LossBreakdown {
  ad::Var objective;
  std::vector<ad::Var> aux;  // aligned with Prediction::aux
  ad::Var total;

  double objective_value() const { return objective->value[0]; }
  double total_value() const { return total->value[0]; }
};

/// Cross-entropy over targets != ignore_index. Aux terms are weighted by
/// lambda[modality]; without aux heads total == objective.
LossBreakdown compute_losses(const Prediction& prediction, std::span<const int> targets,
                             int ignore_index, const FusionConfig& config);

}  // namespace sitsfuse::fusion
