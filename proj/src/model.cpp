#include "sitsfuse/model.hpp"

#include "sitsfuse/error.hpp"

using nlohmann::json;

namespace sitsfuse {

using fusion::Scheme;
using fusion::Task;

std::size_t ModelSpec::output_classes() const {
  return static_cast<std::size_t>(num_classes) + (task == Task::semantic ? 1 : 0);
}

void ModelSpec::validate() const {
  if (num_classes < 2) throw ConfigError("model: need at least two classes");
  if (channels.empty()) throw ConfigError("model: channel list is empty");
  if (modality_names.size() < channels.size())
    throw ConfigError("model: one name per modality required");
  if (decoder_hidden == 0) throw ConfigError("model: decoder width must be positive");
  fusion.validate(channels.size());
  if (fusion.scheme == Scheme::mid && task == Task::semantic)
    throw ConfigError(
        "mid fusion is not supported for semantic segmentation (merging modalities inside U-TAE "
        "has no defined up-sampling path)");
  if (task == Task::parcel) {
    pse.validate();
    ltae.validate();
    if (pse.out % ltae.heads != 0)
      throw ConfigError("model: PSE width must be divisible by the number of attention heads");
  } else {
    utae.validate();
  }
}

json ModelSpec::to_json() const {
  return {{"task", fusion::to_string(task)},
          {"fusion", fusion.to_json()},
          {"pse", pse.to_json()},
          {"ltae", ltae.to_json()},
          {"utae", utae.to_json()},
          {"decoder_hidden", decoder_hidden},
          {"num_classes", num_classes},
          {"channels", channels},
          {"modality_names", modality_names},
          {"seed", seed}};
}

ModelSpec ModelSpec::from_json(const json& j) {
  ModelSpec s;
  try {
    if (j.contains("task")) s.task = fusion::task_from_string(j.at("task").get<std::string>());
    if (j.contains("fusion")) s.fusion = fusion::FusionConfig::from_json(j.at("fusion"));
    if (j.contains("pse")) s.pse = enc::PixelSetConfig::from_json(j.at("pse"));
    if (j.contains("ltae")) s.ltae = enc::LtaeConfig::from_json(j.at("ltae"));
    if (j.contains("utae")) s.utae = enc::UtaeConfig::from_json(j.at("utae"));
    s.decoder_hidden = j.value("decoder_hidden", s.decoder_hidden);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.channels = j.value("channels", s.channels);
    s.modality_names = j.value("modality_names", s.modality_names);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
  return s;
}

std::vector<int> batch_targets(const Batch& batch, Task task, int num_classes) {
  if (task == Task::parcel) {
    if (batch.targets.size() != batch.size())
      throw std::invalid_argument("parcel batch without one target per sample");
    return batch.targets;
  }
  std::vector<int> out;
  for (const auto& r : batch.semantic)
    for (int v : r.values) {
      if (v == void_label(num_classes))
        out.push_back(kIgnoreTarget);
      else if (v == background_label(num_classes))
        out.push_back(num_classes);
      else
        out.push_back(v);
    }
  return out;
}

FusionModel::FusionModel(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const auto& f = spec_.fusion;
  const std::uint64_t seed = spec_.seed;
  const std::size_t K = spec_.output_classes(), hidden = spec_.decoder_hidden;
  auto name = [&](int m) { return spec_.modality_names[static_cast<std::size_t>(m)]; };
  auto channels = [&](int m) { return spec_.channels[static_cast<std::size_t>(m)]; };
  std::size_t fused_channels = 0;
  for (int m : f.modalities) fused_channels += channels(m);
  const bool aux = f.aux_enabled;

  if (spec_.task == Task::parcel) {
    switch (f.scheme) {
      case Scheme::single: {
        Branch b;
        b.modality = f.modalities[0];
        b.pse = enc::PixelSetEncoder(params_, "PSE-" + name(b.modality), channels(b.modality), spec_.pse, seed);
        b.ltae = enc::Ltae(params_, "LTAE-" + name(b.modality), spec_.pse.out, spec_.ltae, true, seed);
        b.has_ltae = true;
        classifier_ = heads::ClassificationHead(params_, "Decoder", b.ltae.out(), hidden, K, seed);
        branches_.push_back(std::move(b));
        break;
      }
      case Scheme::early:
        shared_pse_ = enc::PixelSetEncoder(params_, "PSE", fused_channels, spec_.pse, seed);
        shared_ltae_ = enc::Ltae(params_, "LTAE", spec_.pse.out, spec_.ltae, true, seed);
        classifier_ = heads::ClassificationHead(params_, "Decoder", shared_ltae_.out(), hidden, K, seed);
        break;
      case Scheme::mid: {
        for (int m : f.modalities) {
          Branch b;
          b.modality = m;
          b.pse = enc::PixelSetEncoder(params_, "PSE-" + name(m), channels(m), spec_.pse, seed);
          branches_.push_back(std::move(b));
        }
        shared_ltae_ = enc::Ltae(params_, "LTAE", spec_.pse.out, spec_.ltae, true, seed);
        classifier_ = heads::ClassificationHead(params_, "Decoder", shared_ltae_.out(), hidden, K, seed);
        if (aux)
          for (auto& b : branches_) {
            b.ltae = enc::Ltae(params_, "LTAE-" + name(b.modality), spec_.pse.out, spec_.ltae, true, seed);
            b.has_ltae = true;
            b.classifier = heads::ClassificationHead(params_, "Decoder-" + name(b.modality), b.ltae.out(), hidden, K, seed);
            b.has_head = true;
          }
        break;
      }
      case Scheme::late:
      case Scheme::decision: {
        std::size_t width = 0;
        for (int m : f.modalities) {
          Branch b;
          b.modality = m;
          b.pse = enc::PixelSetEncoder(params_, "PSE-" + name(m), channels(m), spec_.pse, seed);
          b.ltae = enc::Ltae(params_, "LTAE-" + name(m), spec_.pse.out, spec_.ltae, true, seed);
          b.has_ltae = true;
          width += b.ltae.out();
          branches_.push_back(std::move(b));
        }
        if (f.scheme == Scheme::late)
          classifier_ = heads::ClassificationHead(params_, "Decoder", width, hidden, K, seed);
        if (f.scheme == Scheme::decision || aux)
          for (auto& b : branches_) {
            b.classifier = heads::ClassificationHead(params_, "Decoder-" + name(b.modality), b.ltae.out(), hidden, K, seed);
            b.has_head = true;
          }
        break;
      }
    }
    has_shared_head_ = f.scheme != Scheme::decision;
    return;
  }

  const std::size_t w1 = spec_.utae.widths.front();
  switch (f.scheme) {
    case Scheme::single: {
      Branch b;
      b.modality = f.modalities[0];
      b.utae = enc::Utae(params_, "UTAE-" + name(b.modality), channels(b.modality), spec_.utae, seed);
      segmenter_ = heads::SegmentationHead(params_, "Head", w1, hidden, K, seed);
      branches_.push_back(std::move(b));
      break;
    }
    case Scheme::early:
      shared_utae_ = enc::Utae(params_, "UTAE", fused_channels, spec_.utae, seed);
      segmenter_ = heads::SegmentationHead(params_, "Head", w1, hidden, K, seed);
      break;
    case Scheme::late:
    case Scheme::decision:
      for (int m : f.modalities) {
        Branch b;
        b.modality = m;
        b.utae = enc::Utae(params_, "UTAE-" + name(m), channels(m), spec_.utae, seed);
        branches_.push_back(std::move(b));
      }
      if (f.scheme == Scheme::late)
        segmenter_ = heads::SegmentationHead(params_, "Head", w1 * branches_.size(), hidden, K, seed);
      if (f.scheme == Scheme::decision || aux)
        for (auto& b : branches_) {
          b.segmenter = heads::SegmentationHead(params_, "Head-" + name(b.modality), w1, hidden, K, seed);
          b.has_head = true;
        }
      break;
    case Scheme::mid:
      break;  // rejected by validate()
  }
  has_shared_head_ = f.scheme != Scheme::decision;
}

fusion::Prediction FusionModel::forward(const Batch& batch) const {
  return spec_.task == Task::parcel ? forward_parcel(batch) : forward_semantic(batch);
}

fusion::Prediction FusionModel::forward_parcel(const Batch& batch) const {
  const auto& f = spec_.fusion;
  fusion::Prediction pred;
  switch (f.scheme) {
    case Scheme::single: {
      const Branch& b = branches_.front();
      const ModalityBatch& x = batch.modality(b.modality);
      pred.logits = classifier_(b.ltae(b.pse(x), x.dates, x.mask).embedding);
      break;
    }
    case Scheme::early: {
      const ModalityBatch fused = fusion::early_fuse(batch, f.modalities, f.target_modality);
      pred.logits = classifier_(shared_ltae_(shared_pse_(fused), fused.dates, fused.mask).embedding);
      break;
    }
    case Scheme::mid: {
      std::vector<ad::Var> seqs;
      std::vector<const ModalityBatch*> sources;
      for (const auto& b : branches_) {
        sources.push_back(&batch.modality(b.modality));
        seqs.push_back(b.pse(*sources.back()));
      }
      const auto merged = fusion::mid_fuse(seqs, sources);
      pred.logits = classifier_(shared_ltae_(merged.sequence, merged.dates, merged.mask).embedding);
      for (std::size_t i = 0; i < branches_.size(); ++i) {
        const Branch& b = branches_[i];
        if (!b.has_head) continue;
        pred.aux.push_back(b.classifier(b.ltae(seqs[i], sources[i]->dates, sources[i]->mask).embedding));
        pred.aux_modality.push_back(b.modality);
      }
      break;
    }
    case Scheme::late:
    case Scheme::decision: {
      std::vector<ad::Var> embeddings;
      for (const auto& b : branches_) {
        const ModalityBatch& x = batch.modality(b.modality);
        embeddings.push_back(b.ltae(b.pse(x), x.dates, x.mask).embedding);
      }
      std::vector<ad::Var> per_modality;
      for (std::size_t i = 0; i < branches_.size(); ++i)
        if (branches_[i].has_head) per_modality.push_back(branches_[i].classifier(embeddings[i]));
      if (f.scheme == Scheme::late) {
        pred.logits = classifier_(fusion::late_fuse(embeddings));
      } else {
        pred.logits = fusion::decision_fuse(per_modality);
      }
      if (f.aux_enabled)
        for (std::size_t i = 0; i < branches_.size(); ++i) {
          pred.aux.push_back(per_modality[i]);
          pred.aux_modality.push_back(branches_[i].modality);
        }
      break;
    }
  }
  return pred;
}

fusion::Prediction FusionModel::forward_semantic(const Batch& batch) const {
  const auto& f = spec_.fusion;
  fusion::Prediction pred;
  switch (f.scheme) {
    case Scheme::single: {
      const Branch& b = branches_.front();
      pred.logits = heads::pixel_rows(segmenter_(b.utae(batch.modality(b.modality)).full));
      break;
    }
    case Scheme::early: {
      const ModalityBatch fused = fusion::early_fuse(batch, f.modalities, f.target_modality);
      pred.logits = heads::pixel_rows(segmenter_(shared_utae_(fused).full));
      break;
    }
    case Scheme::late:
    case Scheme::decision: {
      std::vector<ad::Var> maps;
      for (const auto& b : branches_) maps.push_back(b.utae(batch.modality(b.modality)).full);
      std::vector<ad::Var> per_modality;
      for (std::size_t i = 0; i < branches_.size(); ++i)
        if (branches_[i].has_head) per_modality.push_back(heads::pixel_rows(branches_[i].segmenter(maps[i])));
      if (f.scheme == Scheme::late) {
        pred.logits = heads::pixel_rows(segmenter_(ad::concat(maps, 1)));
      } else {
        pred.logits = fusion::decision_fuse(per_modality);
      }
      if (f.aux_enabled)
        for (std::size_t i = 0; i < branches_.size(); ++i) {
          pred.aux.push_back(per_modality[i]);
          pred.aux_modality.push_back(branches_[i].modality);
        }
      break;
    }
    case Scheme::mid:
      throw ConfigError("mid fusion is not supported for semantic segmentation");
  }
  return pred;
}

std::unique_ptr<FusionModel> build_model(const ModelSpec& spec) {
  return std::make_unique<FusionModel>(spec);
}

}  // namespace sitsfuse
