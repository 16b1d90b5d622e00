#include "sitsfuse/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "sitsfuse/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sitsfuse::synth {
namespace {

const char* plan_name(PlanKind k) {
  switch (k) {
    case PlanKind::none: return "none";
    case PlanKind::complementary: return "complementary";
    case PlanKind::optical_dominant: return "optical_dominant";
  }
  return "none";
}

PlanKind plan_from_name(const std::string& s) {
  if (s == "none") return PlanKind::none;
  if (s == "complementary") return PlanKind::complementary;
  if (s == "optical_dominant") return PlanKind::optical_dominant;
  throw ConfigError("unknown complementarity plan '" + s + "'");
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(hi - lo + 1)));
}

/// T distinct sorted days in [1, 366].
std::vector<int> draw_dates(Rng& rng, int t) {
  std::set<int> days;
  while (static_cast<int>(days.size()) < t) days.insert(uniform_int(rng, 1, 366));
  return {days.begin(), days.end()};
}

const std::vector<std::string> kCropNames = {"wheat",     "maize",     "barley",  "rapeseed",
                                             "sunflower", "grassland", "soybean", "sorghum",
                                             "oats",      "potato",    "beet",    "vineyard"};

std::vector<std::string> class_names(int k) {
  std::vector<std::string> names;
  for (int i = 0; i < k; ++i)
    names.push_back(i < static_cast<int>(kCropNames.size()) ? kCropNames[static_cast<std::size_t>(i)]
                                                            : "class_" + std::to_string(i));
  return names;
}

std::vector<std::string> modality_names(std::size_t m) {
  std::vector<std::string> names;
  const char* known[] = {"S2", "S1A", "S1D"};
  for (std::size_t i = 0; i < m; ++i)
    names.push_back(i < 3 ? known[i] : "M" + std::to_string(i));
  return names;
}

struct Tessellation {
  LabelRaster instances;
  int parcels = 0;
};

/// Nearest-seed partition with a 1 or 2 px background margin. Redrawn until
/// every parcel keeps at least `min_pixels` pixels.
Tessellation tessellate(std::size_t h, std::size_t w, Rng& rng) {
  const std::size_t min_pixels = std::max<std::size_t>(4, h * w / 64);
  for (;;) {
    const int n = uniform_int(rng, 4, 10);
    const int margin = uniform_int(rng, 1, 2);
    std::vector<std::pair<double, double>> seeds;
    for (int i = 0; i < n; ++i)
      seeds.emplace_back(uniform(rng, 0, static_cast<double>(h)), uniform(rng, 0, static_cast<double>(w)));
    LabelRaster owner(h, w, 0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double best = 1e300;
        int arg = 0;
        for (int i = 0; i < n; ++i) {
          const double dy = static_cast<double>(y) + 0.5 - seeds[static_cast<std::size_t>(i)].first;
          const double dx = static_cast<double>(x) + 0.5 - seeds[static_cast<std::size_t>(i)].second;
          const double d = dy * dy + dx * dx;
          if (d < best) best = d, arg = i;
        }
        owner.at(y, x) = arg + 1;
      }
    Tessellation t{LabelRaster(h, w, 0), n};
    std::vector<std::size_t> counts(static_cast<std::size_t>(n) + 1, 0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const int id = owner.at(y, x);
        bool edge = (x + 1 < w && owner.at(y, x + 1) != id) || (y + 1 < h && owner.at(y + 1, x) != id);
        if (margin == 2)
          edge = edge || (x > 0 && owner.at(y, x - 1) != id) || (y > 0 && owner.at(y - 1, x) != id);
        if (!edge) {
          t.instances.at(y, x) = id;
          ++counts[static_cast<std::size_t>(id)];
        }
      }
    bool ok = true;
    for (int i = 1; i <= n; ++i) ok = ok && counts[static_cast<std::size_t>(i)] >= min_pixels;
    if (ok) return t;
  }
}

}  // namespace

double ChannelCurve::at(double day) const {
  double v = base;
  for (const auto& b : bumps) {
    const double z = (day - b.center) / b.width;
    v += b.amplitude * std::exp(-0.5 * z * z);
  }
  return v;
}

void SynthConfig::validate() const {
  if (n_patches == 0) throw ConfigError("synth: n_patches must be positive");
  if (height == 0 || width == 0) throw ConfigError("synth: patch size must be positive");
  if (num_classes < 6) throw ConfigError("synth: the complementarity design needs K >= 6");
  if (channels.empty()) throw ConfigError("synth: need at least one modality");
  if (time_ranges.size() != channels.size())
    throw ConfigError("synth: one time range per modality required");
  for (auto c : channels)
    if (c == 0) throw ConfigError("synth: channel counts must be positive");
  for (const auto& r : time_ranges)
    if (r[0] < 1 || r[1] < r[0] || r[1] > 366)
      throw ConfigError("synth: time range must satisfy 1 <= lo <= hi <= 366");
  if (!(cloud_rate >= 0.0 && cloud_rate <= 1.0)) throw ConfigError("synth: cloud_rate must be in [0, 1]");
  if (!(void_rate >= 0.0 && void_rate < 1.0)) throw ConfigError("synth: void_rate must be in [0, 1)");
  if (speckle_scale < 0.0 || pixel_noise < 0.0 || date_jitter < 0.0 || amplitude_jitter < 0.0)
    throw ConfigError("synth: noise levels must be non-negative");
  if (n_folds < 2) throw ConfigError("synth: n_folds must be at least 2");
}

json SynthConfig::to_json() const {
  json ranges = json::array();
  for (const auto& r : time_ranges) ranges.push_back({r[0], r[1]});
  return {{"n_patches", n_patches},
          {"height", height},
          {"width", width},
          {"num_classes", num_classes},
          {"channels", channels},
          {"time_ranges", ranges},
          {"cloud_rate", cloud_rate},
          {"speckle_scale", speckle_scale},
          {"pixel_noise", pixel_noise},
          {"date_jitter", date_jitter},
          {"amplitude_jitter", amplitude_jitter},
          {"void_rate", void_rate},
          {"plan", {{"kind", plan_name(plan.kind)},
                    {"center_gap", plan.center_gap},
                    {"amplitude_gap", plan.amplitude_gap}}},
          {"n_folds", n_folds},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  try {
    c.n_patches = j.value("n_patches", c.n_patches);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.channels = j.value("channels", c.channels);
    if (j.contains("time_ranges")) {
      c.time_ranges.clear();
      for (const auto& r : j.at("time_ranges")) c.time_ranges.push_back({r.at(0).get<int>(), r.at(1).get<int>()});
    }
    c.cloud_rate = j.value("cloud_rate", c.cloud_rate);
    c.speckle_scale = j.value("speckle_scale", c.speckle_scale);
    c.pixel_noise = j.value("pixel_noise", c.pixel_noise);
    c.date_jitter = j.value("date_jitter", c.date_jitter);
    c.amplitude_jitter = j.value("amplitude_jitter", c.amplitude_jitter);
    c.void_rate = j.value("void_rate", c.void_rate);
    if (j.contains("plan")) {
      const auto& p = j.at("plan");
      if (p.is_string()) {
        c.plan.kind = plan_from_name(p.get<std::string>());
      } else {
        c.plan.kind = plan_from_name(p.value("kind", std::string("complementary")));
        c.plan.center_gap = p.value("center_gap", c.plan.center_gap);
        c.plan.amplitude_gap = p.value("amplitude_gap", c.plan.amplitude_gap);
      }
    }
    c.n_folds = j.value("n_folds", c.n_folds);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<ClassProfile> make_profiles(const SynthConfig& config) {
  Rng rng = make_stream(config.seed, "profiles");
  std::vector<ClassProfile> profiles(static_cast<std::size_t>(config.num_classes) + 1);
  for (auto& p : profiles) {
    p.modalities.resize(config.modality_count());
    for (std::size_t m = 0; m < config.modality_count(); ++m)
      for (std::size_t c = 0; c < config.channels[m]; ++c) {
        ChannelCurve cv;
        cv.base = uniform(rng, 0.1, 0.3);
        cv.bumps[0] = {uniform(rng, 0.3, 1.0), uniform(rng, 30, 336), uniform(rng, 20, 35)};
        cv.bumps[1] = {uniform(rng, 0.1, 0.5), uniform(rng, 30, 336), uniform(rng, 20, 35)};
        p.modalities[m].push_back(cv);
      }
  }
  return apply_complementarity(std::move(profiles), config.num_classes, config.plan);
}

std::vector<ClassProfile> apply_complementarity(std::vector<ClassProfile> profiles, int num_classes,
                                                const ComplementarityPlan& plan) {
  if (plan.kind == PlanKind::none) return profiles;
  if (num_classes < 6) throw ConfigError("complementarity plan needs K >= 6");
  const double g = plan.center_gap;
  const double lo_amp = 0.4, hi_amp = lo_amp + std::max(plan.amplitude_gap, 0.5) + 0.1;

  // Discriminating bump of the first six classes. Slots are `g` days apart.
  auto slot = [g](int i) { return 40.0 + g * i; };
  std::array<double, 6> optical_center{}, radar_center{};
  if (plan.kind == PlanKind::complementary) {
    optical_center = {slot(1), slot(1), slot(0), slot(2), slot(3), slot(4)};
    radar_center = {slot(0), slot(2), slot(4), slot(4), slot(1), slot(3)};
  } else {
    optical_center = {slot(0), slot(1), slot(2), slot(3), slot(4), slot(5)};
    radar_center = {slot(0), slot(0), slot(0), slot(0), slot(0), slot(0)};
  }
  const std::size_t M = profiles.front().modalities.size();
  for (int k = 0; k < 6; ++k) {
    auto& p = profiles[static_cast<std::size_t>(k)];
    for (std::size_t m = 0; m < M; ++m)
      for (auto& cv : p.modalities[m]) cv.bumps[0].center = m == 0 ? optical_center[k] : radar_center[k];
  }
  auto set_amp = [&](int k, bool optical, double a) {
    auto& p = profiles[static_cast<std::size_t>(k)];
    for (std::size_t m = 0; m < M; ++m)
      if ((m == 0) == optical)
        for (auto& cv : p.modalities[m]) cv.bumps[0].amplitude = a;
  };
  auto copy_modality = [&](int dst, int src, bool optical) {
    for (std::size_t m = 0; m < M; ++m)
      if ((m == 0) == optical)
        profiles[static_cast<std::size_t>(dst)].modalities[m] = profiles[static_cast<std::size_t>(src)].modalities[m];
  };

  if (plan.kind == PlanKind::complementary) {
    set_amp(0, false, lo_amp);
    set_amp(1, false, hi_amp);
    set_amp(2, true, lo_amp);
    set_amp(3, true, hi_amp);
    copy_modality(1, 0, true);
    copy_modality(3, 2, false);
  } else {
    for (int k = 1; k < num_classes; ++k) copy_modality(k, 0, false);
  }
  return profiles;
}

GeneratedPatch generate_patch(const SynthConfig& config, const std::vector<ClassProfile>& profiles,
                              const std::string& patch_id, Rng& rng) {
  const std::size_t H = config.height, W = config.width, M = config.modality_count();
  const int K = config.num_classes;
  GeneratedPatch out;
  MultimodalSample& s = out.sample;
  s.patch_id = patch_id;

  Tessellation tess = tessellate(H, W, rng);
  AnnotationSet& ann = s.annotations;
  ann.instances = tess.instances;
  ann.semantic = LabelRaster(H, W, background_label(K));
  std::vector<int> parcel_class(static_cast<std::size_t>(tess.parcels) + 1, K);
  std::vector<bool> parcel_void(static_cast<std::size_t>(tess.parcels) + 1, false);
  std::vector<double> shift(static_cast<std::size_t>(tess.parcels) + 1, 0.0);
  std::vector<double> gain(static_cast<std::size_t>(tess.parcels) + 1, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int id = 1; id <= tess.parcels; ++id) {
    const auto i = static_cast<std::size_t>(id);
    parcel_class[i] = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(K)));
    parcel_void[i] = uniform01(rng) < config.void_rate;
    shift[i] = config.date_jitter * normal(rng);
    gain[i] = 1.0 + config.amplitude_jitter * normal(rng);
    ann.parcel_labels[id] = parcel_class[i];
  }
  for (std::size_t p = 0; p < H * W; ++p) {
    const int id = ann.instances.values[p];
    if (id == 0) continue;
    const auto i = static_cast<std::size_t>(id);
    ann.semantic.values[p] = parcel_void[i] ? void_label(K) : parcel_class[i];
  }

  for (std::size_t m = 0; m < M; ++m) {
    ModalitySeries series;
    series.modality_id = static_cast<int>(m);
    const int T = uniform_int(rng, config.time_ranges[m][0], config.time_ranges[m][1]);
    series.dates = draw_dates(rng, T);
    series.time = static_cast<std::size_t>(T);
    series.channels = config.channels[m];
    series.height = H;
    series.width = W;
    series.data.assign(series.time * series.channels * H * W, 0.0f);
    std::vector<std::uint8_t> cloudy(series.time, 0);
    if (m == 0) {
      for (auto& f : cloudy) f = uniform01(rng) < config.cloud_rate ? 1 : 0;
      out.occluded = cloudy;
    }
    const double k_shape = config.speckle_scale > 0 ? 1.0 / (config.speckle_scale * config.speckle_scale) : 0.0;
    std::gamma_distribution<double> speckle(k_shape > 0 ? k_shape : 1.0,
                                            k_shape > 0 ? 1.0 / k_shape : 1.0);
    for (std::size_t t = 0; t < series.time; ++t) {
      const double day = series.dates[t];
      for (std::size_t c = 0; c < series.channels; ++c) {
        if (cloudy[t]) {
          const double bright = uniform(rng, 1.5, 1.9);
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
              series.at(t, c, y, x) = static_cast<float>(bright + 0.02 * normal(rng));
          continue;
        }
        // One curve evaluation per parcel and date, then per-pixel noise.
        std::vector<double> level(static_cast<std::size_t>(tess.parcels) + 1);
        level[0] = profiles[static_cast<std::size_t>(K)].modalities[m][c].at(day);
        for (int id = 1; id <= tess.parcels; ++id) {
          const auto i = static_cast<std::size_t>(id);
          const auto& cv = profiles[static_cast<std::size_t>(parcel_class[i])].modalities[m][c];
          level[i] = gain[i] * cv.at(day - shift[i]);
        }
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            double v = level[static_cast<std::size_t>(ann.instances.at(y, x))] +
                       config.pixel_noise * normal(rng);
            if (m > 0 && k_shape > 0) v *= speckle(rng);
            series.at(t, c, y, x) = static_cast<float>(v);
          }
      }
    }
    s.modalities.push_back(std::move(series));
  }
  s.validate(K);
  return out;
}

std::string patch_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "patch_%05zu", index);
  return buf;
}

std::vector<std::uint8_t> load_cloud_flags(const fs::path& patch_dir) {
  std::ifstream in(patch_dir / "clouds.json");
  if (!in) throw IoError("cannot open " + (patch_dir / "clouds.json").string());
  return json::parse(in).get<std::vector<std::uint8_t>>();
}

DatasetManifest generate_dataset(const SynthConfig& config, const fs::path& root) {
  config.validate();
  const auto profiles = make_profiles(config);
  const std::size_t M = config.modality_count();

  DatasetManifest manifest;
  manifest.root = root;
  manifest.num_classes = config.num_classes;
  manifest.class_names = class_names(config.num_classes);
  manifest.modality_names = modality_names(M);
  for (std::size_t i = 0; i < config.n_patches; ++i) manifest.patch_ids.push_back(patch_name(i));
  manifest.folds = make_folds(manifest.patch_ids, config.n_folds, config.seed);
  fs::create_directories(root);

  // Per-patch partial sums, reduced in patch order so the statistics do not
  // depend on thread scheduling.
  struct Partial {
    std::vector<std::vector<double>> sum, sq;
    std::vector<double> count;
  };
  std::vector<Partial> partials(config.n_patches);
  std::string failure;

#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < config.n_patches; ++i) {
    try {
      Rng rng = make_stream(config.seed, "patch", i);
      const std::string& id = manifest.patch_ids[i];
      GeneratedPatch g = generate_patch(config, profiles, id, rng);
      const fs::path dir = save_sample(g.sample, root, config.num_classes);
      {
        std::ofstream out(dir / "clouds.json", std::ios::trunc);
        out << json(g.occluded).dump() << '\n';
        if (!out) throw IoError("write failed: " + (dir / "clouds.json").string());
      }
      Partial& part = partials[i];
      part.sum.resize(M);
      part.sq.resize(M);
      part.count.assign(M, 0.0);
      if (manifest.folds.at(id) >= config.n_folds) continue;  // statistics exclude the last fold
      for (std::size_t m = 0; m < M; ++m) {
        const ModalitySeries& s = g.sample.modalities[m];
        part.sum[m].assign(s.channels, 0.0);
        part.sq[m].assign(s.channels, 0.0);
        const std::size_t plane = s.height * s.width;
        for (std::size_t t = 0; t < s.time; ++t)
          for (std::size_t c = 0; c < s.channels; ++c) {
            const float* f = s.data.data() + (t * s.channels + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              part.sum[m][c] += f[p];
              part.sq[m][c] += static_cast<double>(f[p]) * f[p];
            }
          }
        part.count[m] = static_cast<double>(s.time * plane);
      }
    } catch (const std::exception& e) {
#pragma omp critical
      if (failure.empty()) failure = e.what();
    }
  }
  if (!failure.empty()) throw IoError(failure);

  for (std::size_t m = 0; m < M; ++m) {
    ChannelStats st;
    st.mean.assign(config.channels[m], 0.0);
    st.std.assign(config.channels[m], 0.0);
    std::vector<double> sq(config.channels[m], 0.0);
    double n = 0.0;
    for (const auto& part : partials) {
      if (part.count.empty() || part.count[m] == 0.0) continue;
      n += part.count[m];
      for (std::size_t c = 0; c < config.channels[m]; ++c) {
        st.mean[c] += part.sum[m][c];
        sq[c] += part.sq[m][c];
      }
    }
    for (std::size_t c = 0; c < config.channels[m]; ++c) {
      st.mean[c] /= n;
      const double var = std::max(sq[c] / n - st.mean[c] * st.mean[c], 0.0);
      st.std[c] = std::max(std::sqrt(var), 1e-6);
    }
    manifest.stats.push_back(st);
  }
  save_manifest(manifest, root);
  std::ofstream out(root / "synth_config.json", std::ios::trunc);
  out << config.to_json().dump(2) << '\n';
  if (!out) throw IoError("write failed: " + (root / "synth_config.json").string());
  return manifest;
}

}  // namespace sitsfuse::synth
