#include "sitsfuse/experiment.hpp"

#include <cstdlib>
#include <fstream>

#include "sitsfuse/error.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace sitsfuse {

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  model.seed = s;
  train.seed = s;
  if (synth) synth->seed = s;
}

void ExperimentConfig::set_task(fusion::Task t) {
  model.task = t;
  if (train.task != t) {
    train.task = t;
    if (t == fusion::Task::semantic && train.batch_size == 128) train.batch_size = 4;
  }
}

void ExperimentConfig::validate() const {
  if (!dataset && !synth) throw ConfigError("experiment needs a dataset path or a synth section");
  if (model.task != train.task)
    throw ConfigError("model task '" + fusion::to_string(model.task) + "' differs from train task '" +
                      fusion::to_string(train.task) + "'");
  if (synth) {
    synth->validate();
    if (static_cast<int>(synth->num_classes) != model.num_classes || synth->channels != model.channels)
      throw ConfigError("model class count/channels do not match the synth section");
  }
  model.validate();
  train.validate();
}

json ExperimentConfig::to_json() const {
  json j;
  if (dataset) j["dataset"] = dataset->generic_string();
  if (synth) j["synth"] = synth->to_json();
  j["model"] = model.to_json();
  j["train"] = train.to_json();
  j["output"] = output.generic_string();
  j["seed"] = seed;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  try {
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("dataset")) c.dataset = fs::path(j.at("dataset").get<std::string>());
    if (j.contains("synth")) {
      c.synth = synth::SynthConfig::from_json(j.at("synth"));
      if (!j.at("synth").contains("seed")) c.synth->seed = c.seed;
    }
    json m = j.value("model", json::object());
    if (j.contains("fusion")) m["fusion"] = j.at("fusion");
    if (j.contains("task")) m["task"] = j.at("task");
    if (c.synth) {
      if (!m.contains("num_classes")) m["num_classes"] = c.synth->num_classes;
      if (!m.contains("channels")) m["channels"] = c.synth->channels;
    }
    if (!m.contains("seed")) m["seed"] = c.seed;
    c.model = ModelSpec::from_json(m);
    json t = j.value("train", json::object());
    if (!t.contains("task")) t["task"] = fusion::to_string(c.model.task);
    if (!t.contains("seed")) t["seed"] = c.seed;
    c.train = tasks::TrainConfig::from_json(t);
    c.output = j.contains("output") ? fs::path(j.at("output").get<std::string>()) : output_root() / "run";
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

fs::path output_root() {
  const char* env = std::getenv("SITSFUSE_OUT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

DatasetManifest prepare_dataset(ExperimentConfig& config) {
  if (!config.dataset) config.dataset = config.output / "dataset";
  const fs::path root = *config.dataset;
  DatasetManifest manifest;
  if (fs::exists(root / "manifest.json")) {
    manifest = load_manifest(root);
  } else {
    if (!config.synth) throw IoError("no dataset at " + root.string() + " and no synth section to build one");
    manifest = synth::generate_dataset(*config.synth, root);
  }
  config.model.num_classes = manifest.num_classes;
  config.model.channels.clear();
  for (const auto& s : manifest.stats) config.model.channels.push_back(s.mean.size());
  if (!manifest.modality_names.empty()) config.model.modality_names = manifest.modality_names;
  config.model.validate();
  return manifest;
}

}  // namespace sitsfuse
