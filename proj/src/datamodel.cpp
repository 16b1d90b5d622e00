#include "sitsfuse/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "sitsfuse/error.hpp"
#include "sitsfuse/rng.hpp"
#include "sitsfuse/tns.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sitsfuse {
namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::string modality_file(int modality_id) {
  return "modality_" + std::to_string(modality_id) + ".tns";
}

LabelRaster read_raster(const fs::path& path) {
  Shape shape;
  auto values = tns::read_i32(path, shape);
  if (shape.size() != 2) throw FormatError(path.string() + ": expected a 2-D raster");
  LabelRaster r;
  r.height = shape[0];
  r.width = shape[1];
  r.values = std::move(values);
  return r;
}

}  // namespace

void ModalitySeries::validate() const {
  const std::string who = "modality " + std::to_string(modality_id);
  if (time == 0 || channels == 0 || height == 0 || width == 0)
    throw ValidationError(who + ": empty series");
  if (dates.size() != time)
    throw ValidationError(who + ": " + std::to_string(dates.size()) + " dates for " +
                          std::to_string(time) + " acquisitions");
  if (data.size() != time * channels * height * width)
    throw ValidationError(who + ": data size does not match T×C×H×W");
  for (std::size_t t = 1; t < dates.size(); ++t)
    if (dates[t] <= dates[t - 1])
      throw ValidationError(who + ": dates not strictly increasing at position " +
                            std::to_string(t));
  for (float v : data)
    if (!std::isfinite(v)) throw ValidationError(who + ": non-finite value");
}

void AnnotationSet::validate(int num_classes) const {
  if (semantic.height != instances.height || semantic.width != instances.width ||
      semantic.size() != semantic.height * semantic.width ||
      instances.size() != instances.height * instances.width)
    throw ValidationError("annotation rasters disagree in shape");
  for (const auto& [id, cls] : parcel_labels) {
    if (id <= 0) throw ValidationError("parcel id " + std::to_string(id) + " must be positive");
    if (cls < 0 || cls >= num_classes)
      throw ValidationError("parcel " + std::to_string(id) + " has class " + std::to_string(cls) +
                            " outside [0, " + std::to_string(num_classes) + ")");
  }
  for (std::size_t i = 0; i < semantic.size(); ++i) {
    const int sem = semantic.values[i];
    const int inst = instances.values[i];
    if (sem < 0 || sem > background_label(num_classes))
      throw ValidationError("semantic value " + std::to_string(sem) + " out of range");
    if (inst < 0) throw ValidationError("negative instance id");
    if (inst == 0) continue;
    auto it = parcel_labels.find(inst);
    if (it == parcel_labels.end())
      throw ValidationError("instance id " + std::to_string(inst) + " missing from labels");
    if (sem != void_label(num_classes) && sem != it->second)
      throw ValidationError("instance " + std::to_string(inst) + " pixel has semantic class " +
                            std::to_string(sem) + " but label " + std::to_string(it->second));
  }
}

void MultimodalSample::validate(int num_classes) const {
  if (modalities.empty()) throw ValidationError(patch_id + ": no modalities");
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    const auto& s = modalities[m];
    if (s.modality_id != static_cast<int>(m))
      throw ValidationError(patch_id + ": modalities must be ordered by modality_id");
    s.validate();
    if (s.height != modalities[0].height || s.width != modalities[0].width)
      throw ValidationError(patch_id + ": modalities disagree on H×W");
  }
  annotations.validate(num_classes);
  if (annotations.semantic.height != height() || annotations.semantic.width != width())
    throw ValidationError(patch_id + ": annotation rasters do not match image size");
}

void DatasetManifest::validate() const {
  std::set<std::string> ids(patch_ids.begin(), patch_ids.end());
  if (ids.size() != patch_ids.size()) throw ValidationError("manifest: duplicate patch ids");
  if (folds.size() != patch_ids.size()) throw ValidationError("manifest: fold map incomplete");
  for (const auto& id : patch_ids) {
    auto it = folds.find(id);
    if (it == folds.end()) throw ValidationError("manifest: no fold for " + id);
    if (it->second < 1) throw ValidationError("manifest: folds are numbered from 1");
  }
  for (const auto& s : stats) {
    if (s.mean.size() != s.std.size()) throw ValidationError("manifest: mean/std size mismatch");
    for (double v : s.std)
      if (!(v > 0.0)) throw ValidationError("manifest: channel std must be positive");
  }
  if (num_classes <= 0) throw ValidationError("manifest: num_classes must be positive");
}

std::vector<std::string> DatasetManifest::ids_in_folds(std::span<const int> wanted) const {
  std::vector<std::string> out;
  for (const auto& id : patch_ids)
    if (std::find(wanted.begin(), wanted.end(), folds.at(id)) != wanted.end()) out.push_back(id);
  return out;
}

json DatasetManifest::to_json() const {
  json j;
  j["patch_ids"] = patch_ids;
  j["folds"] = folds;
  json st = json::array();
  for (const auto& s : stats) st.push_back({{"mean", s.mean}, {"std", s.std}});
  j["stats"] = st;
  j["num_classes"] = num_classes;
  j["class_names"] = class_names;
  j["modality_names"] = modality_names;
  return j;
}

DatasetManifest DatasetManifest::from_json(const json& j, const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  try {
    m.patch_ids = j.at("patch_ids").get<std::vector<std::string>>();
    m.folds = j.at("folds").get<std::map<std::string, int>>();
    for (const auto& s : j.at("stats"))
      m.stats.push_back({s.at("mean").get<std::vector<double>>(), s.at("std").get<std::vector<double>>()});
    m.num_classes = j.at("num_classes").get<int>();
    m.class_names = j.value("class_names", std::vector<std::string>{});
    m.modality_names = j.value("modality_names", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& root) {
  manifest.validate();
  fs::create_directories(root);
  write_json(root / "manifest.json", manifest.to_json());
}

DatasetManifest load_manifest(const fs::path& root) {
  return DatasetManifest::from_json(read_json(root / "manifest.json"), root);
}

fs::path save_sample(const MultimodalSample& sample, const fs::path& root, int num_classes) {
  sample.validate(num_classes);
  const fs::path dir = root / sample.patch_id;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json dates = json::object();
  for (const auto& s : sample.modalities) {
    tns::write(dir / modality_file(s.modality_id), {s.time, s.channels, s.height, s.width},
               std::span<const float>(s.data));
    dates[std::to_string(s.modality_id)] = s.dates;
  }
  write_json(dir / "dates.json", dates);
  const auto& a = sample.annotations;
  tns::write(dir / "semantic.tns", {a.semantic.height, a.semantic.width},
             std::span<const std::int32_t>(a.semantic.values));
  tns::write(dir / "instances.tns", {a.instances.height, a.instances.width},
             std::span<const std::int32_t>(a.instances.values));
  json labels = json::object();
  for (const auto& [id, cls] : a.parcel_labels) labels[std::to_string(id)] = cls;
  write_json(dir / "labels.json", labels);
  return dir;
}

MultimodalSample load_sample_dir(const fs::path& dir, const std::string& patch_id, int num_classes,
                                 std::size_t modality_count) {
  MultimodalSample s;
  s.patch_id = patch_id;
  const json dates = read_json(dir / "dates.json");
  for (std::size_t m = 0; m < modality_count; ++m) {
    const fs::path file = dir / modality_file(static_cast<int>(m));
    if (!fs::exists(file)) throw IoError("missing file " + file.string());
    Shape shape;
    ModalitySeries series;
    series.modality_id = static_cast<int>(m);
    series.data = tns::read_f32(file, shape);
    if (shape.size() != 4) throw FormatError(file.string() + ": expected rank 4 (T, C, H, W)");
    series.time = shape[0];
    series.channels = shape[1];
    series.height = shape[2];
    series.width = shape[3];
    const std::string key = std::to_string(m);
    if (!dates.contains(key))
      throw ValidationError((dir / "dates.json").string() + ": no dates for modality " + key);
    series.dates = dates.at(key).get<std::vector<int>>();
    s.modalities.push_back(std::move(series));
  }
  s.annotations.semantic = read_raster(dir / "semantic.tns");
  s.annotations.instances = read_raster(dir / "instances.tns");
  const json labels = read_json(dir / "labels.json");
  for (const auto& [key, value] : labels.items())
    s.annotations.parcel_labels[std::stoi(key)] = value.get<int>();
  try {
    s.validate(num_classes);
  } catch (const ValidationError& e) {
    throw ValidationError(dir.string() + ": " + e.what());
  }
  return s;
}

MultimodalSample load_sample(const std::string& patch_id, const DatasetManifest& manifest) {
  std::size_t modality_count = manifest.stats.size();
  if (modality_count == 0) modality_count = manifest.modality_names.size();
  return load_sample_dir(manifest.root / patch_id, patch_id, manifest.num_classes, modality_count);
}

std::size_t ModalityBatch::real_count(std::size_t b) const {
  return static_cast<std::size_t>(
      std::count(mask.begin() + static_cast<long>(b * time),
                 mask.begin() + static_cast<long>((b + 1) * time), std::uint8_t{1}));
}

std::vector<std::size_t> ModalityBatch::kept(std::size_t b) const {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < time; ++t)
    if (mask[b * time + t]) out.push_back(t);
  return out;
}

const ModalityBatch& Batch::modality(int modality_id) const {
  for (const auto& m : modalities)
    if (m.modality_id == modality_id) return m;
  throw std::out_of_range("batch has no modality " + std::to_string(modality_id));
}

Batch collate(std::span<const MultimodalSample* const> samples) {
  if (samples.empty()) throw std::invalid_argument("collate: empty sample list");
  const MultimodalSample& first = *samples.front();
  const std::size_t M = first.modalities.size();
  for (const auto* s : samples) {
    if (s->modalities.size() != M) throw ValidationError("collate: samples disagree on M");
    for (std::size_t m = 0; m < M; ++m)
      if (s->modalities[m].channels != first.modalities[m].channels ||
          s->modalities[m].height != first.modalities[m].height ||
          s->modalities[m].width != first.modalities[m].width)
        throw ValidationError("collate: samples disagree on C/H/W for modality " +
                              std::to_string(m));
  }
  Batch batch;
  const std::size_t B = samples.size();
  for (std::size_t m = 0; m < M; ++m) {
    ModalityBatch mb;
    mb.modality_id = first.modalities[m].modality_id;
    mb.batch = B;
    mb.channels = first.modalities[m].channels;
    mb.height = first.modalities[m].height;
    mb.width = first.modalities[m].width;
    for (const auto* s : samples) mb.time = std::max(mb.time, s->modalities[m].time);
    mb.data.assign(B * mb.time * mb.frame_size(), 0.0);
    mb.mask.assign(B * mb.time, 0);
    mb.dates.assign(B * mb.time, -1);
    for (std::size_t b = 0; b < B; ++b) {
      const ModalitySeries& src = samples[b]->modalities[m];
      std::copy(src.data.begin(), src.data.end(), mb.frame(b, 0));
      for (std::size_t t = 0; t < src.time; ++t) {
        mb.mask[b * mb.time + t] = 1;
        mb.dates[b * mb.time + t] = src.dates[t];
      }
    }
    batch.modalities.push_back(std::move(mb));
  }
  for (const auto* s : samples) {
    batch.patch_ids.push_back(s->patch_id);
    batch.semantic.push_back(s->annotations.semantic);
    batch.instances.push_back(s->annotations.instances);
    batch.parcel_labels.push_back(s->annotations.parcel_labels);
  }
  return batch;
}

Batch collate(std::span<const MultimodalSample> samples) {
  std::vector<const MultimodalSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return collate(std::span<const MultimodalSample* const>(ptrs));
}

Batch normalize(Batch batch, const DatasetManifest& manifest) {
  for (auto& mb : batch.modalities) {
    if (mb.modality_id < 0 || static_cast<std::size_t>(mb.modality_id) >= manifest.stats.size())
      throw ValidationError("normalize: no statistics for modality " +
                            std::to_string(mb.modality_id));
    const ChannelStats& st = manifest.stats[static_cast<std::size_t>(mb.modality_id)];
    if (st.mean.size() != mb.channels)
      throw ValidationError("normalize: statistics have " + std::to_string(st.mean.size()) +
                            " channels, batch has " + std::to_string(mb.channels));
    const std::size_t plane = mb.height * mb.width;
    for (std::size_t b = 0; b < mb.batch; ++b)
      for (std::size_t t = 0; t < mb.time; ++t) {
        if (!mb.mask[b * mb.time + t]) continue;
        double* f = mb.frame(b, t);
        for (std::size_t c = 0; c < mb.channels; ++c) {
          const double mean = st.mean[c], inv = 1.0 / st.std[c];
          for (std::size_t p = 0; p < plane; ++p) f[c * plane + p] = (f[c * plane + p] - mean) * inv;
        }
      }
  }
  return batch;
}

std::map<std::string, int> make_folds(std::span<const std::string> patch_ids, int n_folds,
                                      std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("make_folds: need at least 2 folds");
  std::vector<std::string> order(patch_ids.begin(), patch_ids.end());
  std::sort(order.begin(), order.end());
  Rng rng = make_stream(seed, "folds");
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  std::map<std::string, int> folds;
  for (std::size_t i = 0; i < order.size(); ++i)
    folds[order[i]] = static_cast<int>(i % static_cast<std::size_t>(n_folds)) + 1;
  return folds;
}

}  // namespace sitsfuse
