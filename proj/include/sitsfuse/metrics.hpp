#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sitsfuse/datamodel.hpp"

namespace sitsfuse::metrics {

/// Rows are targets, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : k_(classes), counts_(classes * classes, 0) {}

  /// Adds pairs whose target lies in [0, K); anything else (VOID, ignore) is skipped.
  void update(std::span<const int> predicted, std::span<const int> target);
  void merge(const ConfusionMatrix& other);

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t target, std::size_t predicted) const { return counts_[target * k_ + predicted]; }
  std::uint64_t total() const;
  std::uint64_t true_positives(std::size_t k) const { return at(k, k); }
  std::uint64_t false_positives(std::size_t k) const;
  std::uint64_t false_negatives(std::size_t k) const;
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

struct IouResult {
  double mean = 0.0;
  std::vector<std::optional<double>> per_class;  // empty optional: zero denominator, excluded
};

IouResult miou(const ConfusionMatrix& cm);
double overall_accuracy(const ConfusionMatrix& cm);

struct MatchedPair {
  int gt_id = 0, pred_id = 0;
  double iou = 0.0;
  bool class_correct = false;
};

struct ClassTally {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double iou_sum = 0.0;  // over TP pairs
};

struct PanopticMatchResult {
  std::vector<MatchedPair> pairs;
  std::vector<int> unmatched_gt, unmatched_pred;
  std::vector<ClassTally> tallies;  // per class
  void merge(const PanopticMatchResult& other);
};

struct InstanceMap {
  LabelRaster instances;          // 0 = background
  std::map<int, int> classes;     // instance id -> class
};

/// Matches instances at mask IoU > 0.5 after removing pixels whose gt
/// semantic label is VOID (`void_mask` non-zero) from both masks.
PanopticMatchResult panoptic_match(const InstanceMap& gt, const InstanceMap& pred,
                                   std::span<const std::uint8_t> void_mask, std::size_t num_classes);

struct PanopticQuality {
  std::vector<std::optional<double>> sq, rq, pq;  // per class; empty if the class is absent
  double mean_sq = 0.0, mean_rq = 0.0, mean_pq = 0.0;
};

PanopticQuality pq_sq_rq(const PanopticMatchResult& result);

struct MetricReport {
  std::vector<std::string> class_names;
  ConfusionMatrix confusion;
  double oa = 0.0, miou = 0.0;
  std::vector<std::optional<double>> iou;
  std::optional<PanopticQuality> panoptic;

  static MetricReport from_confusion(const ConfusionMatrix& cm, std::vector<std::string> names);
  nlohmann::json to_json() const;
  /// One row per class plus an aggregate row.
  std::string to_csv() const;
  void write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const;
};

}  // namespace sitsfuse::metrics
