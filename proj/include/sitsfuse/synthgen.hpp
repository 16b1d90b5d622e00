#pragma once

// Toy multimodal SITS generator. Classes differ only through their temporal
// profiles, and the complementarity plan controls which modality can tell
// which classes apart.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "sitsfuse/datamodel.hpp"
#include "sitsfuse/rng.hpp"

namespace sitsfuse::synth {

struct Bump {
  double amplitude = 0.0, center = 0.0, width = 1.0;
};

/// base + two Gaussian bumps over day of year.
struct ChannelCurve {
  double base = 0.0;
  std::array<Bump, 2> bumps{};
  double at(double day) const;
};

struct ClassProfile {
  std::vector<std::vector<ChannelCurve>> modalities;  // [modality][channel]
};

enum class PlanKind { none, complementary, optical_dominant };

struct ComplementarityPlan {
  PlanKind kind = PlanKind::complementary;
  double center_gap = 60.0;     // days between discriminating bump centers
  double amplitude_gap = 0.5;   // for the designated pairs (0,1) radar and (2,3) optical
};

struct SynthConfig {
  std::size_t n_patches = 300;
  std::size_t height = 32, width = 32;
  int num_classes = 6;
  std::vector<std::size_t> channels{4, 3, 3};
  std::vector<std::array<int, 2>> time_ranges{{8, 12}, {18, 24}, {18, 24}};
  double cloud_rate = 0.2;
  double speckle_scale = 0.3;
  double pixel_noise = 0.03;
  double date_jitter = 6.0;        // std of the per-parcel phenology shift, days
  double amplitude_jitter = 0.08;  // std of the per-parcel amplitude scale
  double void_rate = 0.05;         // fraction of parcels whose pixels are VOID
  ComplementarityPlan plan;
  int n_folds = 5;
  std::uint64_t seed = 0;

  std::size_t modality_count() const { return channels.size(); }
  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

/// Random profiles for K crop classes plus one background profile (index K),
/// then the complementarity plan.
std::vector<ClassProfile> make_profiles(const SynthConfig& config);

std::vector<ClassProfile> apply_complementarity(std::vector<ClassProfile> profiles, int num_classes,
                                                const ComplementarityPlan& plan);

struct GeneratedPatch {
  MultimodalSample sample;
  std::vector<std::uint8_t> occluded;  // one flag per optical acquisition
};

GeneratedPatch generate_patch(const SynthConfig& config, const std::vector<ClassProfile>& profiles,
                              const std::string& patch_id, Rng& rng);

/// Writes every patch, `clouds.json` per patch, `manifest.json` and
/// `synth_config.json` under `root`.
DatasetManifest generate_dataset(const SynthConfig& config, const std::filesystem::path& root);

std::vector<std::uint8_t> load_cloud_flags(const std::filesystem::path& patch_dir);

std::string patch_name(std::size_t index);

}  // namespace sitsfuse::synth
