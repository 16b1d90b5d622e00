#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace sitsfuse {

/// Semantic raster codes beyond the K crop classes.
inline int void_label(int num_classes) { return num_classes; }
inline int background_label(int num_classes) { return num_classes + 1; }

template <typename T>
struct Raster {
  std::size_t height = 0, width = 0;
  std::vector<T> values;

  Raster() = default;
  Raster(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), values(h * w, fill) {}
  T& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  const T& at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::size_t size() const { return values.size(); }
  friend bool operator==(const Raster&, const Raster&) = default;
};

using LabelRaster = Raster<std::int32_t>;

/// One sensor's image time series over a patch, T × C × H × W.
struct ModalitySeries {
  int modality_id = 0;
  std::size_t time = 0, channels = 0, height = 0, width = 0;
  std::vector<float> data;
  std::vector<int> dates;  // day of year, strictly increasing

  float at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
    return data[((t * channels + c) * height + y) * width + x];
  }
  float& at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) {
    return data[((t * channels + c) * height + y) * width + x];
  }
  void validate() const;
  friend bool operator==(const ModalitySeries&, const ModalitySeries&) = default;
};

struct AnnotationSet {
  LabelRaster semantic;   // crop class in [0,K), void_label(K), or background_label(K)
  LabelRaster instances;  // 0 = background, > 0 = parcel id
  std::map<int, int> parcel_labels;

  void validate(int num_classes) const;
  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

struct MultimodalSample {
  std::string patch_id;
  std::vector<ModalitySeries> modalities;  // ordered by modality_id; 0 is optical
  AnnotationSet annotations;

  void validate(int num_classes) const;
  std::size_t height() const { return modalities.front().height; }
  std::size_t width() const { return modalities.front().width; }
  friend bool operator==(const MultimodalSample&, const MultimodalSample&) = default;
};

struct ChannelStats {
  std::vector<double> mean, std;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> patch_ids;
  std::map<std::string, int> folds;  // patch id -> fold in [1, 5]
  std::vector<ChannelStats> stats;   // per modality
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<std::string> modality_names;

  void validate() const;
  std::vector<std::string> ids_in_folds(std::span<const int> folds) const;
  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j, const std::filesystem::path& root);
};

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& root);
DatasetManifest load_manifest(const std::filesystem::path& root);

/// Writes `root/<patch_id>/` and returns that directory.
std::filesystem::path save_sample(const MultimodalSample& sample, const std::filesystem::path& root,
                                  int num_classes);
MultimodalSample load_sample(const std::string& patch_id, const DatasetManifest& manifest);
MultimodalSample load_sample_dir(const std::filesystem::path& dir, const std::string& patch_id,
                                 int num_classes, std::size_t modality_count);

/// Padded per-modality tensor B × T_max × C × H × W. Padded positions are
/// zero, carry date −1 and mask 0. A parcel batch stores its pixel set as
/// H = 1, W = S.
struct ModalityBatch {
  int modality_id = 0;
  std::size_t batch = 0, time = 0, channels = 0, height = 0, width = 0;
  std::vector<double> data;
  std::vector<std::uint8_t> mask;  // B × T_max, 1 = real acquisition
  std::vector<int> dates;          // B × T_max

  std::size_t frame_size() const { return channels * height * width; }
  const double* frame(std::size_t b, std::size_t t) const {
    return data.data() + (b * time + t) * frame_size();
  }
  double* frame(std::size_t b, std::size_t t) { return data.data() + (b * time + t) * frame_size(); }
  std::size_t real_count(std::size_t b) const;
  /// Indices t of unmasked positions of sample b, in order.
  std::vector<std::size_t> kept(std::size_t b) const;
};

struct Batch {
  std::vector<ModalityBatch> modalities;
  std::vector<std::string> patch_ids;
  std::vector<LabelRaster> semantic;
  std::vector<LabelRaster> instances;
  std::vector<std::map<int, int>> parcel_labels;
  std::vector<int> targets;  // parcel classification targets, one per sample

  std::size_t size() const { return patch_ids.size(); }
  const ModalityBatch& modality(int modality_id) const;
};

Batch collate(std::span<const MultimodalSample* const> samples);
Batch collate(std::span<const MultimodalSample> samples);

/// (x − mean) / std per channel on unmasked positions; masked positions are left untouched.
Batch normalize(Batch batch, const DatasetManifest& manifest);

/// Seeded partition into n_folds folds numbered 1..n_folds; sizes differ by at most one.
std::map<std::string, int> make_folds(std::span<const std::string> patch_ids, int n_folds,
                                      std::uint64_t seed);

}  // namespace sitsfuse
