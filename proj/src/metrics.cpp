#include "sitsfuse/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "sitsfuse/error.hpp"

using nlohmann::json;

namespace sitsfuse::metrics {

void ConfusionMatrix::update(std::span<const int> predicted, std::span<const int> target) {
  if (predicted.size() != target.size()) throw std::invalid_argument("confusion: size mismatch");
  const int k = static_cast<int>(k_);
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] < 0 || target[i] >= k) continue;
    if (predicted[i] < 0 || predicted[i] >= k)
      throw std::out_of_range("confusion: prediction " + std::to_string(predicted[i]) + " out of range");
    ++counts_[static_cast<std::size_t>(target[i]) * k_ + static_cast<std::size_t>(predicted[i])];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("confusion: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::false_positives(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t r = 0; r < k_; ++r)
    if (r != k) s += at(r, k);
  return s;
}

std::uint64_t ConfusionMatrix::false_negatives(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t c = 0; c < k_; ++c)
    if (c != k) s += at(k, c);
  return s;
}

IouResult miou(const ConfusionMatrix& cm) {
  if (cm.classes() == 0) throw std::invalid_argument("miou: empty confusion matrix");
  IouResult r;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    const std::uint64_t tp = cm.true_positives(k);
    const std::uint64_t den = tp + cm.false_positives(k) + cm.false_negatives(k);
    if (den == 0) {
      r.per_class.emplace_back();
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(den);
    r.per_class.emplace_back(iou);
    sum += iou;
    ++n;
  }
  r.mean = n ? sum / static_cast<double>(n) : 0.0;
  return r;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("overall accuracy of an empty confusion matrix");
  std::uint64_t diag = 0;
  for (std::size_t k = 0; k < cm.classes(); ++k) diag += cm.true_positives(k);
  return static_cast<double>(diag) / static_cast<double>(total);
}

void PanopticMatchResult::merge(const PanopticMatchResult& other) {
  pairs.insert(pairs.end(), other.pairs.begin(), other.pairs.end());
  unmatched_gt.insert(unmatched_gt.end(), other.unmatched_gt.begin(), other.unmatched_gt.end());
  unmatched_pred.insert(unmatched_pred.end(), other.unmatched_pred.begin(), other.unmatched_pred.end());
  if (tallies.size() < other.tallies.size()) tallies.resize(other.tallies.size());
  for (std::size_t k = 0; k < other.tallies.size(); ++k) {
    tallies[k].tp += other.tallies[k].tp;
    tallies[k].fp += other.tallies[k].fp;
    tallies[k].fn += other.tallies[k].fn;
    tallies[k].iou_sum += other.tallies[k].iou_sum;
  }
}

PanopticMatchResult panoptic_match(const InstanceMap& gt, const InstanceMap& pred,
                                   std::span<const std::uint8_t> void_mask, std::size_t num_classes) {
  const std::size_t n = gt.instances.size();
  if (pred.instances.size() != n || (!void_mask.empty() && void_mask.size() != n))
    throw std::invalid_argument("panoptic_match: raster sizes differ");
  // Areas and pairwise intersections over non-VOID pixels.
  std::map<int, std::uint64_t> gt_area, pred_area;
  std::map<std::pair<int, int>, std::uint64_t> inter;
  for (std::size_t i = 0; i < n; ++i) {
    if (!void_mask.empty() && void_mask[i]) continue;
    const int g = gt.instances.values[i], p = pred.instances.values[i];
    if (g) ++gt_area[g];
    if (p) ++pred_area[p];
    if (g && p) ++inter[{g, p}];
  }
  auto class_of = [](const InstanceMap& m, int id) {
    auto it = m.classes.find(id);
    if (it == m.classes.end()) throw ValidationError("instance " + std::to_string(id) + " has no class");
    return it->second;
  };
  PanopticMatchResult r;
  r.tallies.assign(num_classes, {});
  std::map<int, bool> gt_matched, pred_matched;
  for (const auto& [key, count] : inter) {
    const std::uint64_t uni = gt_area[key.first] + pred_area[key.second] - count;
    // IoU > 1/2  <=>  2·|A∩B| > |A∪B|, decided in integers.
    if (2 * count <= uni) continue;
    MatchedPair pair{key.first, key.second, static_cast<double>(count) / static_cast<double>(uni),
                     class_of(gt, key.first) == class_of(pred, key.second)};
    gt_matched[key.first] = pred_matched[key.second] = true;
    const auto gc = static_cast<std::size_t>(class_of(gt, key.first));
    const auto pc = static_cast<std::size_t>(class_of(pred, key.second));
    if (pair.class_correct) {
      ++r.tallies.at(gc).tp;
      r.tallies.at(gc).iou_sum += pair.iou;
    } else {
      ++r.tallies.at(gc).fn;
      ++r.tallies.at(pc).fp;
    }
    r.pairs.push_back(pair);
  }
  for (const auto& [id, area] : gt_area)
    if (!gt_matched.count(id)) {
      r.unmatched_gt.push_back(id);
      ++r.tallies.at(static_cast<std::size_t>(class_of(gt, id))).fn;
    }
  for (const auto& [id, area] : pred_area)
    if (!pred_matched.count(id)) {
      r.unmatched_pred.push_back(id);
      ++r.tallies.at(static_cast<std::size_t>(class_of(pred, id))).fp;
    }
  return r;
}

PanopticQuality pq_sq_rq(const PanopticMatchResult& result) {
  PanopticQuality q;
  double s = 0, r = 0, p = 0;
  std::size_t n = 0;
  for (const auto& t : result.tallies) {
    if (t.tp + t.fp + t.fn == 0) {
      q.sq.emplace_back();
      q.rq.emplace_back();
      q.pq.emplace_back();
      continue;
    }
    const double rq = static_cast<double>(t.tp) /
                      (static_cast<double>(t.tp) + 0.5 * static_cast<double>(t.fp) + 0.5 * static_cast<double>(t.fn));
    const double sq = t.tp ? t.iou_sum / static_cast<double>(t.tp) : 0.0;
    q.sq.emplace_back(sq);
    q.rq.emplace_back(rq);
    q.pq.emplace_back(sq * rq);
    s += sq;
    r += rq;
    p += sq * rq;
    ++n;
  }
  if (n) {
    q.mean_sq = s / static_cast<double>(n);
    q.mean_rq = r / static_cast<double>(n);
    q.mean_pq = p / static_cast<double>(n);
  }
  return q;
}

MetricReport MetricReport::from_confusion(const ConfusionMatrix& cm, std::vector<std::string> names) {
  MetricReport r;
  r.confusion = cm;
  r.class_names = std::move(names);
  while (r.class_names.size() < cm.classes()) r.class_names.push_back("class_" + std::to_string(r.class_names.size()));
  r.oa = overall_accuracy(cm);
  const IouResult iou = metrics::miou(cm);
  r.miou = iou.mean;
  r.iou = iou.per_class;
  return r;
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

}  // namespace

json MetricReport::to_json() const {
  json j;
  j["oa"] = oa;
  j["miou"] = miou;
  json classes = json::array();
  for (std::size_t k = 0; k < confusion.classes(); ++k) {
    json c = {{"name", class_names[k]},
              {"iou", optional_json(iou[k])},
              {"tp", confusion.true_positives(k)},
              {"fp", confusion.false_positives(k)},
              {"fn", confusion.false_negatives(k)}};
    if (panoptic) {
      c["sq"] = optional_json(panoptic->sq[k]);
      c["rq"] = optional_json(panoptic->rq[k]);
      c["pq"] = optional_json(panoptic->pq[k]);
    }
    classes.push_back(c);
  }
  j["classes"] = classes;
  json cm = json::array();
  for (std::size_t r = 0; r < confusion.classes(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < confusion.classes(); ++c) row.push_back(confusion.at(r, c));
    cm.push_back(row);
  }
  j["confusion"] = cm;
  if (panoptic) j["panoptic"] = {{"sq", panoptic->mean_sq}, {"rq", panoptic->mean_rq}, {"pq", panoptic->mean_pq}};
  return j;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "class,iou,tp,fp,fn\n";
  for (std::size_t k = 0; k < confusion.classes(); ++k)
    out << class_names[k] << ',' << fmt(iou[k]) << ',' << confusion.true_positives(k) << ','
        << confusion.false_positives(k) << ',' << confusion.false_negatives(k) << '\n';
  out << "all," << fmt(miou) << ",,,\n";
  out << "oa," << fmt(oa) << ",,,\n";
  return out.str();
}

void MetricReport::write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const {
  {
    std::ofstream out(json_path, std::ios::trunc);
    out << to_json().dump(2) << '\n';
    if (!out) throw IoError("write failed: " + json_path.string());
  }
  std::ofstream out(csv_path, std::ios::trunc);
  out << to_csv();
  if (!out) throw IoError("write failed: " + csv_path.string());
}

}  // namespace sitsfuse::metrics
