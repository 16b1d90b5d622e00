#include "sitsfuse/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sitsfuse/error.hpp"
#include "sitsfuse/tns.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sitsfuse::tasks {

using fusion::Task;

void OptimizerConfig::validate() const {
  if (kind != "adam" && kind != "sgd") throw ConfigError("optimizer must be 'adam' or 'sgd', got '" + kind + "'");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(gamma > 0.0)) throw ConfigError("decay factor must be positive");
}

double OptimizerConfig::lr_at(std::size_t epoch) const {
  if (step_epochs == 0) return lr;
  return lr * std::pow(gamma, static_cast<double>(epoch / step_epochs));
}

json OptimizerConfig::to_json() const {
  return {{"kind", kind}, {"lr", lr},       {"beta1", beta1},  {"beta2", beta2}, {"eps", eps},
          {"momentum", momentum}, {"step_epochs", step_epochs}, {"gamma", gamma}};
}

OptimizerConfig OptimizerConfig::from_json(const json& j) {
  OptimizerConfig c;
  try {
    c.kind = j.value("kind", c.kind);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.momentum = j.value("momentum", c.momentum);
    c.step_epochs = j.value("step_epochs", c.step_epochs);
    c.gamma = j.value("gamma", c.gamma);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("optimizer config: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  optimizer.validate();
  if (train_folds.empty()) throw ConfigError("no training folds");
  if (std::find(train_folds.begin(), train_folds.end(), test_fold) != train_folds.end())
    throw ConfigError("test fold " + std::to_string(test_fold) + " is also a training fold");
}

json TrainConfig::to_json() const {
  return {{"task", fusion::to_string(task)},   {"epochs", epochs},
          {"batch_size", batch_size},          {"optimizer", optimizer.to_json()},
          {"seed", seed},                      {"train_folds", train_folds},
          {"test_fold", test_fold},            {"eval_each_epoch", eval_each_epoch}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    if (j.contains("task")) c.task = fusion::task_from_string(j.at("task").get<std::string>());
    if (!j.contains("batch_size") && c.task == Task::semantic) c.batch_size = 4;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("optimizer")) c.optimizer = OptimizerConfig::from_json(j.at("optimizer"));
    c.seed = j.value("seed", c.seed);
    c.train_folds = j.value("train_folds", c.train_folds);
    c.test_fold = j.value("test_fold", c.test_fold);
    c.eval_each_epoch = j.value("eval_each_epoch", c.eval_each_epoch);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

Dataset load_dataset(const DatasetManifest& manifest, std::span<const int> folds, Task task) {
  Dataset d;
  d.manifest = manifest;
  d.task = task;
  const auto ids = manifest.ids_in_folds(folds);
  d.samples.resize(ids.size());
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < ids.size(); ++i) {
    try {
      d.samples[i] = load_sample(ids[i], manifest);
    } catch (const std::exception& e) {
#pragma omp critical
      if (failure.empty()) failure = e.what();
    }
  }
  if (!failure.empty()) throw IoError(failure);
  if (task == Task::parcel) {
    const int vl = void_label(manifest.num_classes);
    for (std::size_t s = 0; s < d.samples.size(); ++s) {
      const AnnotationSet& a = d.samples[s].annotations;
      std::map<int, std::vector<std::size_t>> pixels;
      for (std::size_t p = 0; p < a.instances.size(); ++p)
        if (a.instances.values[p] > 0 && a.semantic.values[p] != vl) pixels[a.instances.values[p]].push_back(p);
      for (auto& [id, px] : pixels) d.parcels.push_back({s, id, a.parcel_labels.at(id), std::move(px)});
    }
  }
  return d;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> items, std::size_t sample_size, Rng& rng) {
  if (items.empty()) throw std::invalid_argument("make_batch: no items");
  if (data.task == Task::semantic) {
    std::vector<const MultimodalSample*> ptrs;
    for (auto i : items) ptrs.push_back(&data.samples.at(i));
    return normalize(collate(std::span<const MultimodalSample* const>(ptrs)), data.manifest);
  }
  const std::size_t B = items.size(), S = sample_size;
  const MultimodalSample& first = data.samples.at(data.parcels.at(items[0]).sample);
  const std::size_t M = first.modalities.size();
  Batch batch;
  std::vector<std::vector<std::size_t>> sampled(B);
  for (std::size_t b = 0; b < B; ++b) {
    const ParcelRecord& rec = data.parcels.at(items[b]);
    sampled[b] = enc::sample_pixels(rec.pixels, S, rng);
    batch.patch_ids.push_back(data.samples[rec.sample].patch_id);
    batch.targets.push_back(rec.label);
  }
  for (std::size_t m = 0; m < M; ++m) {
    ModalityBatch mb;
    mb.modality_id = static_cast<int>(m);
    mb.batch = B;
    mb.channels = first.modalities[m].channels;
    mb.height = 1;
    mb.width = S;
    for (std::size_t b = 0; b < B; ++b)
      mb.time = std::max(mb.time, data.samples[data.parcels[items[b]].sample].modalities[m].time);
    mb.data.assign(B * mb.time * mb.channels * S, 0.0);
    mb.mask.assign(B * mb.time, 0);
    mb.dates.assign(B * mb.time, -1);
    for (std::size_t b = 0; b < B; ++b) {
      const ModalitySeries& s = data.samples[data.parcels[items[b]].sample].modalities[m];
      const std::size_t plane = s.height * s.width;
      for (std::size_t t = 0; t < s.time; ++t) {
        mb.mask[b * mb.time + t] = 1;
        mb.dates[b * mb.time + t] = s.dates[t];
        double* f = mb.frame(b, t);
        for (std::size_t c = 0; c < s.channels; ++c) {
          const float* src = s.data.data() + (t * s.channels + c) * plane;
          for (std::size_t i = 0; i < S; ++i) f[c * S + i] = src[sampled[b][i]];
        }
      }
    }
    batch.modalities.push_back(std::move(mb));
  }
  return normalize(std::move(batch), data.manifest);
}

std::size_t kept_count(std::size_t available, double keep_ratio) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ConfigError("keep ratio must lie in (0, 1]");
  const double want = std::ceil(keep_ratio * static_cast<double>(available) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(want, 1.0)), 1, std::max<std::size_t>(available, 1));
}

void subsample_acquisitions(Batch& batch, int modality, double keep_ratio, std::uint64_t seed) {
  for (auto& mb : batch.modalities) {
    if (mb.modality_id != modality) continue;
    for (std::size_t b = 0; b < mb.batch; ++b) {
      auto real = mb.kept(b);
      if (real.empty()) continue;
      const std::size_t keep = kept_count(real.size(), keep_ratio);
      Rng rng = make_stream(seed, "ablation:" + batch.patch_ids.at(b), static_cast<std::uint64_t>(modality));
      for (std::size_t i = real.size(); i > 1; --i) std::swap(real[i - 1], real[uniform_index(rng, i)]);
      for (std::size_t i = keep; i < real.size(); ++i) mb.mask[b * mb.time + real[i]] = 0;
    }
  }
}

Optimizer::Optimizer(OptimizerConfig config, const nn::ParameterSet& params) : config_(std::move(config)) {
  config_.validate();
  for (const auto& p : params.items()) {
    names_.push_back(p.name);
    m_.push_back(Tensor::zeros_like(p.var->value));
    v_.push_back(Tensor::zeros_like(p.var->value));
  }
}

void Optimizer::step(nn::ParameterSet& params, double lr) {
  const auto& items = params.items();
  if (items.size() != names_.size()) throw std::logic_error("optimizer/parameter mismatch");
  ++steps_;
  const bool adam = config_.kind == "adam";
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor& w = items[i].var->value;
    const Tensor& g = items[i].var->grad_buffer();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (adam) {
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
        w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
      } else if (config_.momentum > 0.0) {
        m[j] = config_.momentum * m[j] + g[j];
        w[j] -= lr * m[j];
      } else {
        w[j] -= lr * g[j];
      }
    }
  }
}

void Optimizer::save(const fs::path& dir, json& index) const {
  fs::create_directories(dir);
  json state = json::array();
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const std::string mf = names_[i] + ".m.tns", vf = names_[i] + ".v.tns";
    tns::write(dir / mf, m_[i].shape(), std::span<const double>(m_[i].storage()));
    tns::write(dir / vf, v_[i].shape(), std::span<const double>(v_[i].storage()));
    state.push_back({{"name", names_[i]}, {"m", mf}, {"v", vf}});
  }
  index = {{"config", config_.to_json()}, {"steps", steps_}, {"state", state}};
}

void Optimizer::load(const fs::path& dir, const json& index) {
  steps_ = index.at("steps").get<std::uint64_t>();
  const auto& state = index.at("state");
  if (state.size() != names_.size()) throw FormatError(dir.string() + ": optimizer state does not match the model");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (state[i].at("name").get<std::string>() != names_[i])
      throw FormatError(dir.string() + ": optimizer state order differs from the model");
    m_[i] = tns::read_f64(dir / state[i].at("m").get<std::string>());
    v_[i] = tns::read_f64(dir / state[i].at("v").get<std::string>());
  }
}

json HistoryRecord::to_json() const {
  json j = {{"epoch", epoch}, {"loss", loss}, {"objective", objective}, {"aux", aux}, {"lr", lr}};
  j["eval_oa"] = eval_oa ? json(*eval_oa) : json(nullptr);
  j["eval_miou"] = eval_miou ? json(*eval_miou) : json(nullptr);
  return j;
}

HistoryRecord HistoryRecord::from_json(const json& j) {
  HistoryRecord h;
  h.epoch = j.at("epoch").get<std::size_t>();
  h.loss = j.at("loss").get<double>();
  h.objective = j.at("objective").get<double>();
  h.aux = j.at("aux").get<std::vector<double>>();
  h.lr = j.value("lr", 0.0);
  if (j.contains("eval_oa") && !j.at("eval_oa").is_null()) h.eval_oa = j.at("eval_oa").get<double>();
  if (j.contains("eval_miou") && !j.at("eval_miou").is_null()) h.eval_miou = j.at("eval_miou").get<double>();
  return h;
}

void write_history(const std::vector<HistoryRecord>& history, const fs::path& path) {
  json j = json::array();
  for (const auto& h : history) j.push_back(h.to_json());
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  fs::create_directories(dir / "params");
  json params = json::array();
  for (const auto& [name, value] : ckpt.parameters) {
    const std::string file = "params/" + name + ".tns";
    tns::write(dir / file, value.shape(), std::span<const double>(value.storage()));
    params.push_back({{"name", name}, {"file", file}, {"shape", value.shape()}});
  }
  json index = {{"epoch", ckpt.epoch},
                {"model", ckpt.model.to_json()},
                {"train", ckpt.train.to_json()},
                {"parameters", params}};
  if (ckpt.optimizer) {
    json opt;
    ckpt.optimizer->save(dir / "optimizer", opt);
    index["optimizer"] = opt;
  }
  {
    std::ofstream out(dir / "index.json", std::ios::trunc);
    out << index.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + (dir / "index.json").string());
  }
  write_history(ckpt.history, dir / "history.json");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw IoError("cannot open " + (dir / "index.json").string());
  json index;
  try {
    index = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError((dir / "index.json").string() + ": " + e.what());
  }
  Checkpoint c;
  c.model = ModelSpec::from_json(index.at("model"));
  c.train = TrainConfig::from_json(index.at("train"));
  c.epoch = index.at("epoch").get<std::size_t>();
  for (const auto& p : index.at("parameters")) {
    Tensor t = tns::read_f64(dir / p.at("file").get<std::string>());
    if (t.shape() != p.at("shape").get<Shape>())
      throw FormatError(dir.string() + ": parameter " + p.at("name").get<std::string>() + " has shape " +
                        shape_str(t.shape()) + ", index says otherwise");
    c.parameters.emplace_back(p.at("name").get<std::string>(), std::move(t));
  }
  if (fs::exists(dir / "history.json")) {
    std::ifstream h(dir / "history.json");
    for (const auto& r : json::parse(h)) c.history.push_back(HistoryRecord::from_json(r));
  }
  if (index.contains("optimizer")) {
    auto model = restore_model(c);
    c.optimizer = std::make_shared<Optimizer>(OptimizerConfig::from_json(index.at("optimizer").at("config")),
                                              model->parameters());
    c.optimizer->load(dir / "optimizer", index.at("optimizer"));
  }
  return c;
}

std::unique_ptr<FusionModel> restore_model(const Checkpoint& ckpt) {
  auto model = build_model(ckpt.model);
  const auto& items = model->parameters().items();
  if (items.size() != ckpt.parameters.size())
    throw FormatError("checkpoint holds " + std::to_string(ckpt.parameters.size()) + " tensors, model has " +
                      std::to_string(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].name != ckpt.parameters[i].first || items[i].var->value.shape() != ckpt.parameters[i].second.shape())
      throw FormatError("checkpoint tensor " + ckpt.parameters[i].first + " does not match model parameter " +
                        items[i].name);
    items[i].var->value = ckpt.parameters[i].second;
  }
  return model;
}

namespace {

std::vector<std::pair<std::string, Tensor>> snapshot(const FusionModel& model) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : model.parameters().items()) out.emplace_back(p.name, p.var->value);
  return out;
}

std::size_t sample_size_of(const ModelSpec& spec) { return spec.pse.sample_size; }

}  // namespace

Checkpoint train(const ModelSpec& spec, const TrainConfig& config, const Dataset& train_set,
                 const Dataset* eval_set, const TrainHooks& hooks, const Checkpoint* resume) {
  config.validate();
  if (config.task != spec.task) throw ConfigError("train config task differs from the model task");
  if (train_set.task != spec.task) throw ConfigError("dataset was loaded for a different task");
  if (train_set.size() == 0) throw ValidationError("training set is empty");
  Checkpoint ckpt;
  ckpt.model = spec;
  ckpt.train = config;
  std::unique_ptr<FusionModel> model;
  if (resume) {
    model = restore_model(*resume);
    ckpt.epoch = resume->epoch;
    ckpt.history = resume->history;
  } else {
    model = build_model(spec);
  }
  auto optimizer = std::make_shared<Optimizer>(config.optimizer, model->parameters());
  if (resume && resume->optimizer) *optimizer = *resume->optimizer;
  const int K = spec.num_classes;
  const auto& dropout = spec.fusion.dropout;
  const bool use_dropout = spec.fusion.temporal_dropout;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = ckpt.epoch; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = make_stream(config.seed, "shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle, i)]);
    const double lr = config.optimizer.lr_at(epoch);
    HistoryRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    double weight = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::uint64_t stream = epoch * 1000003ULL + batch_index;
      Rng pixel_rng = make_stream(config.seed, "pixels", stream);
      Batch batch = make_batch(train_set, std::span(order).subspan(begin, end - begin), sample_size_of(spec), pixel_rng);
      if (use_dropout) {
        Rng drop_rng = make_stream(config.seed, "dropout", stream);
        batch = fusion::temporal_dropout(std::move(batch), dropout, drop_rng, fusion::Phase::train);
      }
      if (hooks.before_step) hooks.before_step(optimizer->steps(), *model, batch);
      model->parameters().zero_grad();
      const auto targets = batch_targets(batch, spec.task, K);
      const auto pred = model->forward(batch);
      const auto losses = fusion::compute_losses(pred, targets, kIgnoreTarget, spec.fusion);
      if (!std::isfinite(losses.total_value()))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(batch_index + 1));
      ad::backward(losses.total);
      optimizer->step(model->parameters(), lr);
      const double n = static_cast<double>(end - begin);
      rec.loss += n * losses.total_value();
      rec.objective += n * losses.objective_value();
      if (rec.aux.size() < losses.aux.size()) rec.aux.resize(losses.aux.size(), 0.0);
      for (std::size_t a = 0; a < losses.aux.size(); ++a) rec.aux[a] += n * losses.aux[a]->value[0];
      weight += n;
    }
    rec.loss /= weight;
    rec.objective /= weight;
    for (auto& a : rec.aux) a /= weight;
    if (eval_set && config.eval_each_epoch) {
      EvalOptions opt;
      opt.batch_size = config.batch_size;
      opt.sample_size = sample_size_of(spec);
      opt.seed = config.seed;
      const auto report = evaluate(*model, *eval_set, opt);
      rec.eval_oa = report.oa;
      rec.eval_miou = report.miou;
    }
    ckpt.history.push_back(rec);
    ckpt.epoch = epoch + 1;
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  ckpt.parameters = snapshot(*model);
  ckpt.optimizer = optimizer;
  return ckpt;
}

std::vector<std::string> report_class_names(const DatasetManifest& manifest, Task task) {
  std::vector<std::string> names = manifest.class_names;
  while (static_cast<int>(names.size()) < manifest.num_classes) names.push_back("class_" + std::to_string(names.size()));
  if (task == Task::semantic) names.push_back("background");
  return names;
}

metrics::MetricReport evaluate(const FusionModel& model, const Dataset& data, const EvalOptions& options) {
  if (data.size() == 0) throw ValidationError("evaluation set is empty");
  const ModelSpec& spec = model.spec();
  ad::NoGradGuard guard;
  metrics::ConfusionMatrix cm(spec.output_classes());
  std::vector<std::size_t> items(data.size());
  std::iota(items.begin(), items.end(), std::size_t{0});
  const std::size_t bs = std::max<std::size_t>(options.batch_size, 1);
  std::size_t batch_index = 0;
  for (std::size_t begin = 0; begin < items.size(); begin += bs, ++batch_index) {
    const std::size_t end = std::min(items.size(), begin + bs);
    Rng rng = make_stream(options.seed, "eval-pixels", batch_index);
    Batch batch = make_batch(data, std::span(items).subspan(begin, end - begin), options.sample_size, rng);
    if (options.keep_ratio) subsample_acquisitions(batch, 0, *options.keep_ratio, options.ablation_seed);
    const auto targets = batch_targets(batch, spec.task, spec.num_classes);
    const auto pred = model.forward(batch);
    const Tensor& logits = pred.logits->value;
    const std::size_t k = logits.dim(1);
    std::vector<int> predicted(logits.dim(0));
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      const double* row = logits.data() + i * k;
      predicted[i] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    cm.update(predicted, targets);
  }
  return metrics::MetricReport::from_confusion(cm, report_class_names(data.manifest, spec.task));
}

}  // namespace sitsfuse::tasks
