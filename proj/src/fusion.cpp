#include "sitsfuse/fusion.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "sitsfuse/error.hpp"

using nlohmann::json;

namespace sitsfuse::fusion {

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::single: return "single";
    case Scheme::early: return "early";
    case Scheme::mid: return "mid";
    case Scheme::late: return "late";
    case Scheme::decision: return "decision";
  }
  return "?";
}

std::string to_string(Task t) { return t == Task::parcel ? "parcel" : "semantic"; }

Scheme scheme_from_string(const std::string& s) {
  if (s == "single") return Scheme::single;
  if (s == "early") return Scheme::early;
  if (s == "mid") return Scheme::mid;
  if (s == "late") return Scheme::late;
  if (s == "decision") return Scheme::decision;
  throw ConfigError("unknown fusion scheme '" + s + "' (single, early, mid, late, decision)");
}

Task task_from_string(const std::string& s) {
  if (s == "parcel" || s == "classification") return Task::parcel;
  if (s == "semantic" || s == "segmentation") return Task::semantic;
  throw ConfigError("unknown task '" + s + "' (parcel, semantic)");
}

void FusionConfig::validate(std::size_t modality_count) const {
  if (modalities.empty()) throw ConfigError("fusion: no modalities selected");
  std::set<int> seen;
  for (int m : modalities) {
    if (m < 0 || static_cast<std::size_t>(m) >= modality_count)
      throw ConfigError("fusion: modality id " + std::to_string(m) + " out of range");
    if (!seen.insert(m).second) throw ConfigError("fusion: modality " + std::to_string(m) + " listed twice");
  }
  if (lambda.size() < modality_count || dropout.size() < modality_count)
    throw ConfigError("fusion: lambda and dropout need one entry per modality");
  for (double l : lambda)
    if (!(l >= 0.0)) throw ConfigError("fusion: lambda must be non-negative");
  for (double p : dropout)
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("fusion: dropout probabilities must lie in [0, 1)");
  if (scheme == Scheme::single) {
    if (modalities.size() != 1) throw ConfigError("fusion: a single-modality model takes exactly one modality");
    if (aux_enabled)
      throw ConfigError("fusion: auxiliary supervision needs at least two modality branches");
  } else if (modalities.size() < 2) {
    throw ConfigError("fusion: scheme '" + to_string(scheme) + "' needs at least two modalities");
  }
  if (scheme == Scheme::early && aux_enabled)
    throw ConfigError(
        "fusion: early fusion cannot use auxiliary supervision (no modality-specific branch to supervise)");
  if (scheme == Scheme::early &&
      std::find(modalities.begin(), modalities.end(), target_modality) == modalities.end())
    throw ConfigError("fusion: early-fusion target modality is not among the fused modalities");
}

json FusionConfig::to_json() const {
  return {{"scheme", to_string(scheme)},       {"modalities", modalities},
          {"aux", aux_enabled},                {"lambda", lambda},
          {"temporal_dropout", temporal_dropout}, {"dropout", dropout},
          {"target_modality", target_modality}};
}

FusionConfig FusionConfig::from_json(const json& j) {
  FusionConfig c;
  try {
    if (j.contains("scheme")) c.scheme = scheme_from_string(j.at("scheme").get<std::string>());
    c.modalities = j.value("modalities", c.modalities);
    c.aux_enabled = j.value("aux", c.aux_enabled);
    c.lambda = j.value("lambda", c.lambda);
    c.temporal_dropout = j.value("temporal_dropout", c.temporal_dropout);
    c.dropout = j.value("dropout", c.dropout);
    c.target_modality = j.value("target_modality", c.target_modality);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("fusion config: ") + e.what());
  }
  return c;
}

namespace {

struct Lerp {
  std::size_t lo, hi;
  double w;
};

/// Interpolation coordinates of `day` among strictly increasing `src`.
Lerp locate(std::span<const int> src, int day) {
  if (day <= src.front()) return {0, 0, 0.0};
  if (day >= src.back()) return {src.size() - 1, src.size() - 1, 0.0};
  const auto it = std::upper_bound(src.begin(), src.end(), day);
  const std::size_t hi = static_cast<std::size_t>(it - src.begin());
  const std::size_t lo = hi - 1;
  return {lo, hi, static_cast<double>(day - src[lo]) / static_cast<double>(src[hi] - src[lo])};
}

}  // namespace

ModalitySeries interpolate_to_dates(const ModalitySeries& series, std::span<const int> target_dates) {
  if (series.time == 0) throw ValidationError("interpolate_to_dates: empty series");
  ModalitySeries out;
  out.modality_id = series.modality_id;
  out.time = target_dates.size();
  out.channels = series.channels;
  out.height = series.height;
  out.width = series.width;
  out.dates.assign(target_dates.begin(), target_dates.end());
  const std::size_t fs = series.channels * series.height * series.width;
  out.data.resize(out.time * fs);
  for (std::size_t t = 0; t < out.time; ++t) {
    const Lerp l = locate(series.dates, target_dates[t]);
    const float* a = series.data.data() + l.lo * fs;
    const float* b = series.data.data() + l.hi * fs;
    float* o = out.data.data() + t * fs;
    for (std::size_t i = 0; i < fs; ++i)
      o[i] = static_cast<float>((1.0 - l.w) * a[i] + l.w * b[i]);
  }
  return out;
}

ModalitySeries early_fuse(const MultimodalSample& sample, const FusionConfig& config) {
  if (config.modalities.size() == 1) return sample.modalities.at(static_cast<std::size_t>(config.modalities[0]));
  const ModalitySeries& target = sample.modalities.at(static_cast<std::size_t>(config.target_modality));
  ModalitySeries out;
  out.modality_id = target.modality_id;
  out.time = target.time;
  out.height = target.height;
  out.width = target.width;
  out.dates = target.dates;
  std::vector<ModalitySeries> parts;
  for (int m : config.modalities) {
    const ModalitySeries& s = sample.modalities.at(static_cast<std::size_t>(m));
    parts.push_back(m == config.target_modality ? s : interpolate_to_dates(s, target.dates));
    out.channels += s.channels;
  }
  const std::size_t plane = out.height * out.width;
  out.data.resize(out.time * out.channels * plane);
  for (std::size_t t = 0; t < out.time; ++t) {
    float* dst = out.data.data() + t * out.channels * plane;
    for (const auto& p : parts) {
      const float* src = p.data.data() + t * p.channels * plane;
      dst = std::copy(src, src + p.channels * plane, dst);
    }
  }
  return out;
}

ModalityBatch early_fuse(const Batch& batch, std::span<const int> modalities, int target_modality) {
  const ModalityBatch& target = batch.modality(target_modality);
  ModalityBatch out;
  out.modality_id = target.modality_id;
  out.batch = target.batch;
  out.time = target.time;
  out.height = target.height;
  out.width = target.width;
  out.mask = target.mask;
  out.dates = target.dates;
  std::vector<const ModalityBatch*> parts;
  for (int m : modalities) {
    parts.push_back(&batch.modality(m));
    out.channels += parts.back()->channels;
  }
  const std::size_t plane = out.height * out.width;
  out.data.assign(out.batch * out.time * out.channels * plane, 0.0);
  for (std::size_t b = 0; b < out.batch; ++b) {
    const auto targets = target.kept(b);
    std::size_t offset = 0;
    for (const ModalityBatch* p : parts) {
      const std::size_t fs = p->channels * plane;
      const auto src_t = p->kept(b);
      if (src_t.empty()) throw ValidationError("early fusion: a sample has no acquisition left");
      std::vector<int> src_dates;
      for (auto t : src_t) src_dates.push_back(p->dates[b * p->time + t]);
      for (auto t : targets) {
        double* dst = out.frame(b, t) + offset;
        const Lerp l = locate(src_dates, target.dates[b * target.time + t]);
        const double* a = p->frame(b, src_t[l.lo]);
        const double* c = p->frame(b, src_t[l.hi]);
        for (std::size_t i = 0; i < fs; ++i) dst[i] = (1.0 - l.w) * a[i] + l.w * c[i];
      }
      offset += fs;
    }
  }
  return out;
}

MergedSequence mid_fuse(const std::vector<ad::Var>& sequences,
                        const std::vector<const ModalityBatch*>& sources) {
  if (sequences.empty() || sequences.size() != sources.size())
    throw std::invalid_argument("mid_fuse: one source batch per sequence required");
  const std::size_t B = sources.front()->batch, F = sequences.front()->shape().at(2);
  std::size_t total = 0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const Shape& s = sequences[i]->shape();
    if (s.size() != 3 || s[2] != F)
      throw ConfigError("mid fusion: all spatial encoders must produce the same width (got " +
                        shape_str(s) + ")");
    if (s[0] != B || s[1] != sources[i]->time)
      throw std::invalid_argument("mid_fuse: sequence/batch shape mismatch");
    total += s[1];
  }
  if (sequences.size() == 1) {
    const ModalityBatch& src = *sources.front();
    return {sequences.front(), src.dates, src.mask, src.time};
  }
  // Rows of the concatenation [B × Σ T_m × F] flattened to (B·ΣT) × F.
  ad::Var cat = ad::reshape(ad::concat(sequences, 1), {B * total, F});
  MergedSequence out;
  out.time = total;
  out.dates.assign(B * total, -1);
  out.mask.assign(B * total, 0);
  std::vector<std::size_t> order(B * total);
  for (std::size_t b = 0; b < B; ++b) {
    struct Item {
      int date;
      std::size_t source, row;
    };
    std::vector<Item> real, pad;
    std::size_t base = 0;
    for (std::size_t m = 0; m < sources.size(); ++m) {
      const ModalityBatch& src = *sources[m];
      for (std::size_t t = 0; t < src.time; ++t) {
        Item it{src.dates[b * src.time + t], m, b * total + base + t};
        (src.mask[b * src.time + t] ? real : pad).push_back(it);
      }
      base += src.time;
    }
    std::stable_sort(real.begin(), real.end(), [](const Item& x, const Item& y) {
      return x.date != y.date ? x.date < y.date : x.source < y.source;
    });
    std::size_t k = 0;
    for (const auto& it : real) {
      order[b * total + k] = it.row;
      out.dates[b * total + k] = it.date;
      out.mask[b * total + k] = 1;
      ++k;
    }
    for (const auto& it : pad) order[b * total + k++] = it.row;
  }
  out.sequence = ad::reshape(ad::gather_rows(cat, std::move(order)), {B, total, F});
  return out;
}

ad::Var late_fuse(const std::vector<ad::Var>& embeddings) {
  if (embeddings.empty()) throw std::invalid_argument("late_fuse: no embeddings");
  if (embeddings.size() == 1) return embeddings.front();
  return ad::concat(embeddings, embeddings.front()->shape().size() - 1);
}

ad::Var decision_fuse(const std::vector<ad::Var>& logits) {
  if (logits.empty()) throw std::invalid_argument("decision_fuse: no predictions");
  ad::Var acc = ad::softmax(logits.front());
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i]->shape() != logits.front()->shape())
      throw std::invalid_argument("decision_fuse: predictions disagree in shape");
    acc = ad::add(acc, ad::softmax(logits[i]));
  }
  return ad::log(ad::scale(acc, 1.0 / static_cast<double>(logits.size())));
}

Batch temporal_dropout(Batch batch, std::span<const double> p, Rng& rng, Phase phase) {
  if (phase == Phase::eval) return batch;
  for (auto& mb : batch.modalities) {
    const double pm = static_cast<std::size_t>(mb.modality_id) < p.size() ? p[static_cast<std::size_t>(mb.modality_id)] : 0.0;
    if (pm <= 0.0) continue;
    for (std::size_t b = 0; b < mb.batch; ++b) {
      const auto real = mb.kept(b);
      if (real.empty()) continue;
      std::size_t kept = 0;
      for (auto t : real) {
        if (uniform01(rng) < pm) {
          mb.mask[b * mb.time + t] = 0;
        } else {
          ++kept;
        }
      }
      if (kept == 0) mb.mask[b * mb.time + real[uniform_index(rng, real.size())]] = 1;
    }
  }
  return batch;
}

LossBreakdown compute_losses(const Prediction& prediction, std::span<const int> targets,
                             int ignore_index, const FusionConfig& config) {
  LossBreakdown out;
  out.objective = ad::cross_entropy(prediction.logits, targets, ignore_index);
  out.total = out.objective;
  for (std::size_t i = 0; i < prediction.aux.size(); ++i) {
    ad::Var l = ad::cross_entropy(prediction.aux[i], targets, ignore_index);
    out.aux.push_back(l);
    if (config.aux_enabled) {
      const double lam = config.lambda.at(static_cast<std::size_t>(prediction.aux_modality.at(i)));
      out.total = ad::add(out.total, ad::scale(l, lam));
    }
  }
  return out;
}

}  // namespace sitsfuse::fusion
