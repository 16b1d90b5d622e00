// Acceptance harness: one PASS/FAIL line per criterion.
//
//   acceptance [--work DIR] [--cli PATH] [--only 1,4,6]
//
// Criteria 6-8 train small models on generated data; 7 reuses the models of 6.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "../unit/helpers.hpp"
#include "CLI11.hpp"
#include "sitsfuse/analysis.hpp"
#include "sitsfuse/error.hpp"
#include "sitsfuse/model.hpp"
#include "sitsfuse/synthgen.hpp"
#include "sitsfuse/tasks.hpp"

namespace fs = std::filesystem;
using namespace sitsfuse;
using fusion::Scheme;
using fusion::Task;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + uniform_index(rng, hi - lo + 1); }

/// Random padded batch with at least one real acquisition per sample.
ModalityBatch random_batch(Rng& rng, std::size_t B, std::size_t T, std::size_t C, std::size_t H, std::size_t W) {
  ModalityBatch x;
  x.batch = B;
  x.time = T;
  x.channels = C;
  x.height = H;
  x.width = W;
  x.data.resize(B * T * C * H * W);
  for (auto& v : x.data) v = 2.0 * uniform01(rng) - 1.0;
  x.mask.assign(B * T, 0);
  x.dates.assign(B * T, -1);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t real = pick(rng, 1, T);
    int day = static_cast<int>(pick(rng, 0, 30));
    for (std::size_t t = 0; t < real; ++t) {
      x.mask[b * T + t] = 1;
      x.dates[b * T + t] = day;
      day += static_cast<int>(pick(rng, 1, 40));
    }
    for (std::size_t t = real; t < T; ++t)
      std::fill(x.frame(b, t), x.frame(b, t) + x.frame_size(), 0.0);
  }
  return x;
}

/// Worst |Σ_t a − 1| over rows plus worst |a| on masked steps. att: N × G × T × P.
double row_error(const Tensor& att, std::size_t N, std::size_t G, std::size_t T, std::size_t P,
                 const std::vector<std::uint8_t>& mask) {
  double worst = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t p = 0; p < P; ++p) {
        double s = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
          const double v = att[((n * G + g) * T + t) * P + p];
          if (!mask[n * T + t]) worst = std::max(worst, std::abs(v));
          s += v;
        }
        worst = std::max(worst, std::abs(s - 1.0));
      }
  return worst;
}

// ---------------------------------------------------------------------------

Outcome attention_normalization() {
  Rng rng = make_stream(2024, "acceptance-attention");
  double worst = 0.0;
  std::size_t configs = 0;
  for (int i = 0; i < 50; ++i, ++configs) {
    const std::size_t G = std::size_t{1} << pick(rng, 0, 3), E = G * pick(rng, 1, 4), dk = pick(rng, 1, 8);
    const std::size_t N = pick(rng, 1, 5), T = pick(rng, 1, 12);
    nn::ParameterSet params;
    enc::Ltae ltae(params, "LTAE", E, {G, dk, {}}, false, static_cast<std::uint64_t>(i));
    const ModalityBatch x = random_batch(rng, N, T, E, 1, 1);
    Tensor seq({N, T, E}, x.data);
    const auto att = ltae.attention(ad::constant(seq), x.dates, x.mask);
    worst = std::max(worst, row_error(att->value, N, G, T, 1, x.mask));
  }
  for (int i = 0; i < 50; ++i, ++configs) {
    const std::size_t G = std::size_t{1} << pick(rng, 0, 2), L = pick(rng, 1, 3);
    enc::UtaeConfig cfg;
    cfg.widths.clear();
    for (std::size_t l = 0; l < L; ++l) cfg.widths.push_back(G * pick(rng, 1, 3));
    cfg.ltae = {G, pick(rng, 1, 4), {}};
    const std::size_t side = (std::size_t{1} << L) * pick(rng, 1, 3);
    const std::size_t B = pick(rng, 1, 3), T = pick(rng, 1, 7), C = pick(rng, 1, 4);
    const ModalityBatch x = random_batch(rng, B, T, C, side, side + (std::size_t{1} << L) * pick(rng, 0, 1));
    nn::ParameterSet params;
    enc::Utae utae(params, "UTAE", C, cfg, static_cast<std::uint64_t>(100 + i));
    const auto out = utae(x);
    for (const auto& a : out.attention) {
      const auto& s = a->shape();
      worst = std::max(worst, row_error(a->value, B, G, T, s[3] * s[4], x.mask));
    }
    const auto& c = out.coarse_attention->shape();
    worst = std::max(worst, row_error(out.coarse_attention->value, B, G, T, c[3] * c[4], x.mask));
  }
  return {worst <= 1e-5, std::to_string(configs) + " random configurations, worst deviation " + sci(worst)};
}

// ---------------------------------------------------------------------------

ModelSpec tiny_spec(Task task, Scheme scheme, bool aux) {
  ModelSpec s;
  s.task = task;
  s.fusion.scheme = scheme;
  s.fusion.modalities = scheme == Scheme::single ? std::vector<int>{1} : std::vector<int>{0, 1, 2};
  s.fusion.aux_enabled = aux;
  s.pse = {4, {4}, 8};
  s.ltae = {2, 2, {8}};
  s.utae.widths = {4, 4};
  s.utae.ltae = {2, 2, {}};
  s.decoder_hidden = 5;
  s.seed = 17;
  return s;
}

std::vector<ad::Var> all_parameters(const nn::ParameterSet& p) {
  std::vector<ad::Var> out;
  for (const auto& item : p.items()) out.push_back(item.var);
  return out;
}

Outcome gradient_correctness(const fs::path& work) {
  double worst = 0.0;
  std::string worst_name;
  std::vector<std::string> checked;
  std::size_t kinks = 0;
  auto record = [&](const std::string& name, double err) {
    checked.push_back(name);
    if (err > worst) worst = err, worst_name = name;
  };
  Rng rng = make_stream(7, "acceptance-grad");
  {
    nn::ParameterSet params;
    enc::PixelSetEncoder pse(params, "PSE", 3, {5, {4, 6}, 7}, 1);
    const ModalityBatch x = random_batch(rng, 3, 4, 3, 1, 5);
    record("PSE", testutil::gradcheck([&] { return testutil::probe_loss(pse(x)); }, all_parameters(params), 1e-4, 64, &kinks));
  }
  {
    nn::ParameterSet params;
    enc::Ltae ltae(params, "LTAE", 8, {2, 3, {6}}, true, 2);
    const ModalityBatch x = random_batch(rng, 3, 5, 8, 1, 1);
    auto seq = ad::parameter(Tensor({3, 5, 8}, x.data));
    auto inputs = all_parameters(params);
    inputs.push_back(seq);
    record("L-TAE", testutil::gradcheck(
                        [&] { return testutil::probe_loss(ltae(seq, x.dates, x.mask).embedding); }, inputs, 1e-4, 64, &kinks));
  }
  {
    nn::ParameterSet params;
    enc::UtaeConfig cfg;
    cfg.widths = {4, 6};
    cfg.ltae = {2, 2, {}};
    enc::Utae utae(params, "UTAE", 3, cfg, 3);
    const ModalityBatch x = random_batch(rng, 2, 4, 3, 8, 8);
    record("U-TAE", testutil::gradcheck([&] { return testutil::probe_loss(utae(x).full); }, all_parameters(params), 1e-4, 64, &kinks));
  }
  {
    nn::ParameterSet params;
    heads::ClassificationHead head(params, "Decoder", 6, 5, 4, 4);
    auto emb = ad::parameter(testutil::random_tensor({3, 6}, 5));
    const std::vector<int> targets{0, 3, 1};
    auto inputs = all_parameters(params);
    inputs.push_back(emb);
    record("classification head",
           testutil::gradcheck([&] { return ad::cross_entropy(head(emb), targets, -1); }, inputs, 1e-4, 64, &kinks));
  }
  {
    nn::ParameterSet params;
    heads::SegmentationHead head(params, "Head", 3, 4, 5, 6);
    auto maps = ad::parameter(testutil::random_tensor({2, 3, 4, 4}, 7));
    std::vector<int> targets(32);
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<int>(i % 6) - 1;
    auto inputs = all_parameters(params);
    inputs.push_back(maps);
    record("segmentation head", testutil::gradcheck(
                                    [&] { return ad::cross_entropy(heads::pixel_rows(head(maps)), targets, -1); },
                                    inputs, 1e-4, 64, &kinks));
  }
  // Full composed models on real synthetic batches.
  auto sc = testutil::tiny_synth(6, 8);
  sc.height = sc.width = 8;
  const fs::path root = work / "grad_dataset";
  fs::remove_all(root);
  const auto manifest = synth::generate_dataset(sc, root);
  const std::vector<int> folds{1, 2, 3, 4, 5};
  for (Task task : {Task::parcel, Task::semantic}) {
    const auto data = tasks::load_dataset(manifest, folds, task);
    std::vector<std::size_t> items{0, 1};
    Rng brng = make_stream(1, "acceptance-grad-batch");
    const Batch batch = tasks::make_batch(data, items, 4, brng);
    for (Scheme scheme : {Scheme::single, Scheme::early, Scheme::mid, Scheme::late, Scheme::decision})
      for (bool aux : {false, true}) {
        auto spec = tiny_spec(task, scheme, aux);
        try {
          spec.validate();
        } catch (const ConfigError&) {
          continue;
        }
        const auto model = build_model(spec);
        const auto targets = batch_targets(batch, task, spec.num_classes);
        const double err = testutil::gradcheck(
            [&] { return fusion::compute_losses(model->forward(batch), targets, kIgnoreTarget, spec.fusion).total; },
            all_parameters(model->parameters()), 1e-4, 12, &kinks);
        record(fusion::to_string(task) + "/" + fusion::to_string(scheme) + (aux ? "+aux" : ""), err);
      }
  }
  return {worst <= 1e-3, std::to_string(checked.size()) + " gradient checks, worst relative error " + sci(worst) +
                             " (" + worst_name + "), step 1e-4, " + std::to_string(kinks) +
                             " coordinates skipped at ReLU kinks"};
}

// ---------------------------------------------------------------------------

/// Voronoi partition with `n` seeds; returns ids 1..n (some may vanish).
LabelRaster voronoi(Rng& rng, std::size_t H, std::size_t W, std::size_t n, double jitter,
                    const std::vector<std::pair<double, double>>* base, std::vector<std::pair<double, double>>* seeds) {
  seeds->clear();
  for (std::size_t i = 0; i < n; ++i) {
    if (base)
      seeds->emplace_back((*base)[i].first + jitter * (uniform01(rng) - 0.5),
                          (*base)[i].second + jitter * (uniform01(rng) - 0.5));
    else
      seeds->emplace_back(uniform01(rng) * static_cast<double>(H), uniform01(rng) * static_cast<double>(W));
  }
  LabelRaster r(H, W, 0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double best = 1e300;
      for (std::size_t i = 0; i < n; ++i) {
        const double dy = static_cast<double>(y) - (*seeds)[i].first, dx = static_cast<double>(x) - (*seeds)[i].second;
        if (dy * dy + dx * dx < best) best = dy * dy + dx * dx, r.at(y, x) = static_cast<int>(i + 1);
      }
    }
  return r;
}

Outcome metric_oracles() {
  Rng rng = make_stream(99, "acceptance-metrics");
  const std::size_t H = 32, W = 32;
  std::size_t mismatches = 0, pairs_checked = 0, matched_total = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int K = static_cast<int>(pick(rng, 2, 7));
    // Semantic: per-pixel targets with some ignore, noisy predictions.
    std::vector<int> target(H * W), pred(H * W);
    for (std::size_t i = 0; i < H * W; ++i) {
      target[i] = uniform01(rng) < 0.1 ? -1 : static_cast<int>(uniform_index(rng, static_cast<std::size_t>(K)));
      pred[i] = uniform01(rng) < 0.6 && target[i] >= 0 ? target[i]
                                                        : static_cast<int>(uniform_index(rng, static_cast<std::size_t>(K)));
    }
    metrics::ConfusionMatrix cm(static_cast<std::size_t>(K));
    cm.update(pred, target);
    const auto iou = metrics::miou(cm);
    const double oa = metrics::overall_accuracy(cm);
    std::uint64_t correct = 0, counted = 0;
    double sum = 0.0;
    std::size_t present = 0;
    for (int k = 0; k < K; ++k) {
      std::uint64_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < H * W; ++i) {
        if (target[i] < 0) continue;
        if (target[i] == k && pred[i] == k) ++tp;
        if (target[i] != k && pred[i] == k) ++fp;
        if (target[i] == k && pred[i] != k) ++fn;
      }
      if (tp + fp + fn == 0) {
        mismatches += iou.per_class[static_cast<std::size_t>(k)].has_value();
        continue;
      }
      const double v = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      mismatches += !(iou.per_class[static_cast<std::size_t>(k)] && *iou.per_class[static_cast<std::size_t>(k)] == v);
      sum += v;
      ++present;
    }
    for (std::size_t i = 0; i < H * W; ++i)
      if (target[i] >= 0) ++counted, correct += target[i] == pred[i];
    mismatches += iou.mean != sum / static_cast<double>(present);
    mismatches += oa != static_cast<double>(correct) / static_cast<double>(counted);

    // Panoptic: gt Voronoi, prediction from jittered seeds with some relabeling.
    std::vector<std::pair<double, double>> gs, ps;
    const std::size_t n = pick(rng, 3, 12);
    metrics::InstanceMap gt, pr;
    gt.instances = voronoi(rng, H, W, n, 0.0, nullptr, &gs);
    pr.instances = voronoi(rng, H, W, n, 8.0 * uniform01(rng), &gs, &ps);
    for (auto& v : pr.instances.values) v = v * 3 + 1;  // distinct id space
    for (std::size_t i = 0; i < H * W; ++i) {
      if (uniform01(rng) < 0.05) gt.instances.values[i] = 0;
      if (uniform01(rng) < 0.05) pr.instances.values[i] = 0;
    }
    std::set<int> gid(gt.instances.values.begin(), gt.instances.values.end()),
        pid(pr.instances.values.begin(), pr.instances.values.end());
    gid.erase(0);
    pid.erase(0);
    for (int g : gid) gt.classes[g] = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(K)));
    for (int p : pid) pr.classes[p] = uniform01(rng) < 0.3 ? static_cast<int>(uniform_index(rng, static_cast<std::size_t>(K)))
                                                           : gt.classes.count((p - 1) / 3) ? gt.classes[(p - 1) / 3] : 0;
    std::vector<std::uint8_t> void_mask(H * W, 0);
    for (auto& v : void_mask) v = uniform01(rng) < 0.05;
    const auto match = metrics::panoptic_match(gt, pr, void_mask, static_cast<std::size_t>(K));
    const auto q = metrics::pq_sq_rq(match);

    // Brute force over all pairs.
    std::vector<std::uint64_t> tp(static_cast<std::size_t>(K)), fp(tp), fn(tp);
    std::vector<double> iou_sum(static_cast<std::size_t>(K), 0.0);
    auto area = [&](const LabelRaster& r, int id) {
      std::uint64_t a = 0;
      for (std::size_t i = 0; i < H * W; ++i) a += !void_mask[i] && r.values[i] == id;
      return a;
    };
    std::set<int> gm, pm;
    for (int g : gid)
      for (int p : pid) {
        ++pairs_checked;
        std::uint64_t inter = 0;
        for (std::size_t i = 0; i < H * W; ++i)
          inter += !void_mask[i] && gt.instances.values[i] == g && pr.instances.values[i] == p;
        const std::uint64_t uni = area(gt.instances, g) + area(pr.instances, p) - inter;
        if (inter == 0 || static_cast<double>(inter) / static_cast<double>(uni) <= 0.5) continue;
        gm.insert(g);
        pm.insert(p);
        ++matched_total;
        const auto gc = static_cast<std::size_t>(gt.classes[g]), pc = static_cast<std::size_t>(pr.classes[p]);
        if (gc == pc) {
          ++tp[gc];
          iou_sum[gc] += static_cast<double>(inter) / static_cast<double>(uni);
        } else {
          ++fn[gc];
          ++fp[pc];
        }
      }
    for (int g : gid)
      if (!gm.count(g) && area(gt.instances, g) > 0) ++fn[static_cast<std::size_t>(gt.classes[g])];
    for (int p : pid)
      if (!pm.count(p) && area(pr.instances, p) > 0) ++fp[static_cast<std::size_t>(pr.classes[p])];
    double s_sq = 0, s_rq = 0, s_pq = 0;
    std::size_t classes = 0;
    for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k) {
      if (tp[k] + fp[k] + fn[k] == 0) {
        mismatches += q.pq[k].has_value();
        continue;
      }
      const double rq = static_cast<double>(tp[k]) / (static_cast<double>(tp[k]) + 0.5 * static_cast<double>(fp[k]) +
                                                      0.5 * static_cast<double>(fn[k]));
      const double sq = tp[k] ? iou_sum[k] / static_cast<double>(tp[k]) : 0.0;
      mismatches += !(q.sq[k] && *q.sq[k] == sq && *q.rq[k] == rq && *q.pq[k] == sq * rq);
      s_sq += sq;
      s_rq += rq;
      s_pq += sq * rq;
      ++classes;
    }
    if (classes) {
      const double c = static_cast<double>(classes);
      mismatches += q.mean_sq != s_sq / c || q.mean_rq != s_rq / c || q.mean_pq != s_pq / c;
    }
  }
  // Worked example: one class, two gt parcels, one correct match at IoU 0.6.
  metrics::InstanceMap gt, pr;
  gt.instances = LabelRaster(1, 30, 0);
  pr.instances = LabelRaster(1, 30, 0);
  for (std::size_t x = 0; x < 10; ++x) gt.instances.values[x] = 1;
  for (std::size_t x = 15; x < 25; ++x) gt.instances.values[x] = 2;
  for (std::size_t x = 0; x < 6; ++x) pr.instances.values[x] = 5;
  gt.classes = {{1, 0}, {2, 0}};
  pr.classes = {{5, 0}};
  const auto q = metrics::pq_sq_rq(metrics::panoptic_match(gt, pr, {}, 1));
  const bool worked = std::abs(q.mean_sq - 0.6) <= 1e-12 && std::abs(q.mean_rq - 2.0 / 3.0) <= 1e-12 &&
                      std::abs(q.mean_pq - 0.4) <= 1e-12;
  return {mismatches == 0 && worked,
          "50 raster pairs, " + std::to_string(pairs_checked) + " instance pairs (" + std::to_string(matched_total) +
              " matches), " + std::to_string(mismatches) + " mismatches; worked example SQ " + num(q.mean_sq, 12) +
              " RQ " + num(q.mean_rq, 12) + " PQ " + num(q.mean_pq, 12)};
}

// ---------------------------------------------------------------------------

Outcome gradient_flow(const fs::path& work) {
  auto sc = testutil::tiny_synth(12, 21);
  const fs::path root = work / "flow_dataset";
  fs::remove_all(root);
  const auto manifest = synth::generate_dataset(sc, root);
  const std::vector<int> folds{1, 2, 3, 4, 5};
  const auto data = tasks::load_dataset(manifest, folds, Task::parcel);
  std::vector<std::size_t> items;
  for (std::size_t i = 0; i < std::min<std::size_t>(data.size(), 32); ++i) items.push_back(i);
  Rng rng = make_stream(3, "acceptance-flow");
  const Batch batch = tasks::make_batch(data, items, 8, rng);

  ModelSpec spec;
  spec.fusion.scheme = Scheme::late;
  spec.fusion.aux_enabled = true;
  spec.pse = {8, {8, 16}, 16};
  spec.ltae = {4, 4, {16}};
  spec.decoder_hidden = 16;
  spec.seed = 5;
  auto model = build_model(spec);
  std::vector<double> ratios;
  std::string errs;
  const std::vector<double> etas{1e-3, 5e-4, 2.5e-4};
  std::vector<double> e;
  for (double eta : etas) {
    const auto c = analysis::first_order_check(*model, batch, eta);
    e.push_back(std::abs(c.error()));
    errs += (errs.empty() ? "" : ", ") + ("eta " + sci(eta) + ": predicted " + sci(c.predicted) + " error " +
                                          sci(c.error()));
  }
  for (std::size_t i = 0; i + 1 < e.size(); ++i) ratios.push_back(e[i] / e[i + 1]);
  const double min_ratio = *std::min_element(ratios.begin(), ratios.end());

  spec.fusion.aux_enabled = false;
  auto plain = build_model(spec);
  tasks::OptimizerConfig sgd;
  sgd.kind = "sgd";
  const auto r = analysis::gradient_flow_probe(*plain, batch, 0.01, sgd);
  double s = 0.0;
  for (double f : r.fractions) s += f;
  const bool sums = !r.fractions.empty() && std::abs(s - 1.0) <= 1e-6;
  return {min_ratio >= 3.0 && sums, "error ratios under halving " + num(ratios[0]) + ", " + num(ratios[1]) +
                                        "; fractions with L = L_obj sum to 1 " + (s >= 1 ? "+ " : "- ") +
                                        sci(std::abs(s - 1.0)) + " over " + std::to_string(r.modules.size()) +
                                        " modules [" + errs + "]"};
}

// ---------------------------------------------------------------------------

Outcome dropout_statistics(const fs::path& work) {
  auto sc = testutil::tiny_synth(40, 31);
  sc.time_ranges = {{8, 12}, {18, 24}, {18, 24}};
  const fs::path root = work / "dropout_dataset";
  fs::remove_all(root);
  const auto manifest = synth::generate_dataset(sc, root);
  const std::vector<int> folds{1, 2, 3, 4, 5};
  const auto data = tasks::load_dataset(manifest, folds, Task::parcel);
  std::vector<std::size_t> items(data.size());
  std::iota(items.begin(), items.end(), std::size_t{0});
  Rng brng = make_stream(1, "acceptance-dropout-batch");
  const Batch batch = tasks::make_batch(data, items, 2, brng);

  std::string detail;
  bool ok = true;
  for (double p : {0.2, 0.4}) {
    const std::vector<double> probs(3, p);
    std::uint64_t total = 0, dropped = 0;
    bool empty = false;
    for (std::uint64_t rep = 0; total < 50000; ++rep) {
      Rng rng = make_stream(rep, "acceptance-dropout", static_cast<std::uint64_t>(p * 10));
      const Batch d = fusion::temporal_dropout(batch, probs, rng, fusion::Phase::train);
      for (std::size_t m = 0; m < 3; ++m) {
        const auto& before = batch.modalities[m];
        const auto& after = d.modalities[m];
        for (std::size_t b = 0; b < before.batch; ++b) {
          total += before.real_count(b);
          dropped += before.real_count(b) - after.real_count(b);
          empty = empty || after.real_count(b) == 0;
        }
      }
    }
    const double rate = static_cast<double>(dropped) / static_cast<double>(total);
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(total));
    const bool within = std::abs(rate - p) <= 3 * sigma;
    ok = ok && within && !empty;
    detail += "p=" + num(p, 1) + ": rate " + num(rate, 4) + " over " + std::to_string(total) + " (3 sigma " +
              num(3 * sigma, 4) + ")" + (empty ? " EMPTY SEQUENCE" : "") + "; ";
  }
  Rng rng = make_stream(0, "acceptance-dropout-id");
  const std::vector<double> zero(3, 0.0), high(3, 0.9);
  const Batch z = fusion::temporal_dropout(batch, zero, rng, fusion::Phase::train);
  const Batch e = fusion::temporal_dropout(batch, high, rng, fusion::Phase::eval);
  bool identity = true;
  for (std::size_t m = 0; m < 3; ++m)
    identity = identity && z.modalities[m].mask == batch.modalities[m].mask &&
               e.modalities[m].mask == batch.modalities[m].mask && e.modalities[m].data == batch.modalities[m].data;
  detail += std::string("p=0 and eval phase identity: ") + (identity ? "yes" : "no");
  return {ok && identity, detail};
}

// ---------------------------------------------------------------------------

struct Trained {
  std::string name;
  std::unique_ptr<FusionModel> model;
  double miou = 0.0;
};

struct DeskSetup {
  ModelSpec spec;
  tasks::TrainConfig train;
  tasks::EvalOptions eval;
};

DeskSetup desk_setup() {
  DeskSetup d;
  d.spec.pse = {16, {16, 32}, 32};
  d.spec.ltae = {4, 8, {32}};
  d.spec.decoder_hidden = 32;
  d.train.epochs = 10;
  d.train.batch_size = 32;
  d.train.optimizer.lr = 0.005;
  d.eval.sample_size = 16;
  return d;
}

struct Context {
  fs::path work, cli;
  std::vector<Trained> desk;  // criterion 6 models, reused by 7
  std::unique_ptr<tasks::Dataset> desk_test;
  double desk_seconds = 0.0;
};

void train_desk_models(Context& ctx, std::ostream& log) {
  if (!ctx.desk.empty()) return;
  const auto t0 = std::chrono::steady_clock::now();
  synth::SynthConfig sc;  // 300 patches, complementary plan
  sc.seed = 0;
  const fs::path root = ctx.work / "complementary";
  fs::remove_all(root);
  const auto manifest = synth::generate_dataset(sc, root);
  const DeskSetup d = desk_setup();
  const auto train = tasks::load_dataset(manifest, d.train.train_folds, Task::parcel);
  const std::vector<int> test_fold{d.train.test_fold};
  ctx.desk_test = std::make_unique<tasks::Dataset>(tasks::load_dataset(manifest, test_fold, Task::parcel));
  const std::vector<std::pair<std::string, std::pair<Scheme, std::vector<int>>>> rows{
      {"S2", {Scheme::single, {0}}},   {"S1A", {Scheme::single, {1}}}, {"S1D", {Scheme::single, {2}}},
      {"early", {Scheme::early, {0, 1, 2}}}, {"mid", {Scheme::mid, {0, 1, 2}}},  {"late", {Scheme::late, {0, 1, 2}}},
      {"decision", {Scheme::decision, {0, 1, 2}}}};
  for (const auto& [name, what] : rows) {
    ModelSpec spec = d.spec;
    spec.fusion.scheme = what.first;
    spec.fusion.modalities = what.second;
    const auto ckpt = tasks::train(spec, d.train, train);
    tasks::save_checkpoint(ckpt, ctx.work / "checkpoints" / name);
    Trained t{name, tasks::restore_model(ckpt), 0.0};
    t.miou = tasks::evaluate(*t.model, *ctx.desk_test, d.eval).miou;
    log << "    " << name << ": test mIoU " << num(100 * t.miou) << '\n';
    ctx.desk.push_back(std::move(t));
  }
  ctx.desk_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome multimodality_benefit(Context& ctx) {
  train_desk_models(ctx, std::cout);
  std::map<std::string, double> m;
  for (const auto& t : ctx.desk) m[t.name] = 100 * t.miou;
  const double best_single = std::max({m["S2"], m["S1A"], m["S1D"]});
  bool every = true;
  for (const char* f : {"early", "mid", "late", "decision"}) every = every && m[f] > m["S2"];
  const double margin = m["late"] - best_single;
  return {margin >= 5.0 && every && ctx.desk_seconds < 600,
          "late " + num(m["late"]) + " vs best single " + num(best_single) + " (margin " + num(margin) +
              " points); early " + num(m["early"]) + ", mid " + num(m["mid"]) + ", decision " + num(m["decision"]) +
              " vs S2 " + num(m["S2"]) + "; training took " + num(ctx.desk_seconds, 0) + " s"};
}

Outcome cloud_robustness(Context& ctx) {
  train_desk_models(ctx, std::cout);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, const FusionModel*>> refs;
  for (const auto& t : ctx.desk)
    if (t.name == "S2" || t.name == "early" || t.name == "mid" || t.name == "late" || t.name == "decision")
      refs.emplace_back(t.name, t.model.get());
  const auto curves = analysis::robustness_curve(refs, *ctx.desk_test, {1.0, 0.5, 0.1}, 3, 0, desk_setup().eval);
  analysis::report_emit({}, curves, ctx.work / "robustness");
  std::map<std::string, double> at01;
  for (const auto& c : curves) at01[c.model] = 100 * c.mean_miou.back();
  bool every = true;
  for (const char* f : {"early", "mid", "late", "decision"}) every = every && at01[f] > at01["S2"];
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string detail = "mIoU at keep ratio 0.1 (mean of 3):";
  for (const auto& c : curves) detail += " " + c.model + " " + num(100 * c.mean_miou.back());
  detail += "; " + num(seconds, 1) + " s";
  return {at01["decision"] > at01["early"] && every && seconds < 300, detail};
}

Outcome aux_direction(Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  synth::SynthConfig sc;
  sc.plan.kind = synth::PlanKind::optical_dominant;
  const fs::path root = ctx.work / "optical_dominant";
  fs::remove_all(root);
  const auto manifest = synth::generate_dataset(sc, root);
  DeskSetup d = desk_setup();
  const auto train = tasks::load_dataset(manifest, d.train.train_folds, Task::parcel);
  const std::vector<int> test_fold{d.train.test_fold};
  const auto test = tasks::load_dataset(manifest, test_fold, Task::parcel);
  double with = 0.0, without = 0.0;
  std::string runs;
  for (std::uint64_t seed : {0, 1, 2}) {
    for (bool aux : {false, true}) {
      ModelSpec spec = d.spec;
      spec.fusion.scheme = Scheme::late;
      spec.fusion.aux_enabled = aux;
      spec.fusion.lambda = {0.5, 0.5, 0.5};
      spec.seed = seed;
      auto cfg = d.train;
      cfg.seed = seed;
      const auto model = tasks::restore_model(tasks::train(spec, cfg, train));
      auto eval = d.eval;
      eval.seed = seed;
      const double miou = 100 * tasks::evaluate(*model, test, eval).miou;
      (aux ? with : without) += miou / 3.0;
      runs += (runs.empty() ? "" : ", ") + std::string(aux ? "aux" : "base") + "/" + std::to_string(seed) + " " +
              num(miou);
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {with >= without - 0.5 && seconds < 600, "late+aux " + num(with) + " vs late " + num(without) +
                                                      " (mean of 3 seeds: " + runs + "); " + num(seconds, 0) + " s"};
}

// ---------------------------------------------------------------------------

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Run run_cli(const Context& ctx, const std::string& args) {
  const fs::path o = ctx.work / "cli_stdout.txt", e = ctx.work / "cli_stderr.txt";
  const std::string cmd = "'" + ctx.cli.string() + "' " + args + " >'" + o.string() + "' 2>'" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

Outcome config_rules(Context& ctx) {
  const fs::path ds = ctx.work / "rules_dataset";
  fs::remove_all(ds);
  if (run_cli(ctx, "synth --patches 5 --out '" + ds.string() + "'").code != 0)
    return {false, "could not create a dataset through the CLI"};
  struct Case {
    std::string name, args, needle;
  };
  const std::vector<Case> cases{
      {"mid+semantic", "train --dataset '" + ds.string() + "' --task semantic --scheme mid", "mid fusion"},
      {"early+aux", "train --dataset '" + ds.string() + "' --scheme early --aux", "auxiliary"},
      {"gradflow+adam", "gradflow --dataset '" + ds.string() + "' --optimizer adam", "requires"}};
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    const Run r = run_cli(ctx, c.args);
    const bool good = r.code == 2 && r.err.find(c.needle) != std::string::npos;
    ok = ok && good;
    detail += c.name + " -> exit " + std::to_string(r.code) + " \"" + first_line(r.err) + "\"; ";
  }
  return {ok, detail};
}

/// Every regular file under `dir`, relative path -> bytes.
std::map<std::string, std::string> tree(const fs::path& dir, const std::set<std::string>& skip = {}) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) {
      const auto rel = fs::relative(e.path(), dir).generic_string();
      if (!skip.count(rel)) out[rel] = slurp(e.path());
    }
  return out;
}

Outcome reproducibility(Context& ctx) {
  const fs::path base = ctx.work / "repro";
  fs::remove_all(base);
  fs::create_directories(base);
  std::string detail;
  bool ok = true;
  auto same = [&](const std::string& what, const std::map<std::string, std::string>& a,
                  const std::map<std::string, std::string>& b) {
    const bool eq = !a.empty() && a == b;
    ok = ok && eq;
    detail += what + " " + (eq ? "identical" : "DIFFER") + " (" + std::to_string(a.size()) + " files); ";
  };
  for (const char* tag : {"a", "b"}) {
    const fs::path d = base / tag;
    const std::string ds = (d / "data").string();
    const std::string common = " --dataset '" + ds + "' --epochs 2 --batch-size 16 --seed 3";
    const std::vector<std::string> steps{
        "synth --patches 12 --seed 3 --out '" + ds + "'",
        "train" + common + " --out '" + (d / "late").string() + "'",
        "train" + common + " --scheme decision --tdrop --out '" + (d / "decision").string() + "'",
        "eval '" + (d / "late").string() + "' --out '" + (d / "eval").string() + "'",
        "ablate late='" + (d / "late").string() + "' decision='" + (d / "decision").string() +
            "' --ratios 1.0,0.5,0.1 --seed 3 --out '" + (d / "ablation").string() + "'",
        "gradflow" + common + " --optimizer sgd --lr 0.01 --out '" + (d / "flow").string() + "'",
        "report --flow '" + (d / "flow" / "flow.csv").string() + "' --robustness '" +
            (d / "ablation" / "robustness.csv").string() + "' --out '" + (d / "report").string() + "'"};
    for (const auto& s : steps) {
      const Run r = run_cli(ctx, s);
      if (r.code != 0) return {false, "command failed (" + std::to_string(r.code) + "): " + s + ": " + r.err};
    }
  }
  // config.json records the run's own output path; everything else must match byte for byte.
  same("dataset", tree(base / "a" / "data"), tree(base / "b" / "data"));
  for (const char* run : {"late", "decision"})
    same(std::string(run) + " run", tree(base / "a" / run, {"config.json"}), tree(base / "b" / run, {"config.json"}));
  auto cfg = [&](const char* tag) {
    auto j = nlohmann::json::parse(slurp(base / tag / "late" / "config.json"));
    j.erase("output");
    j.erase("dataset");
    return j;
  };
  const bool cfg_same = cfg("a") == cfg("b");
  ok = ok && cfg_same;
  detail += std::string("configs ") + (cfg_same ? "identical" : "DIFFER") + " apart from paths; ";
  for (const char* dir : {"eval", "ablation", "flow", "report"})
    same(dir, tree(base / "a" / dir), tree(base / "b" / dir));
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "sitsfuse_acceptance").string(), cli, only;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--cli", cli, "path to the sitsfuse executable (criteria 9, 10)");
  app.add_option("--only", only, "comma-separated criterion numbers");
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.work = work;
  ctx.cli = cli.empty() ? fs::path(argv[0]).parent_path() / ".." / "tools" / "sitsfuse" : fs::path(cli);
  fs::create_directories(ctx.work);

  std::set<int> wanted;
  if (!only.empty()) {
    std::stringstream ss(only);
    std::string tok;
    while (std::getline(ss, tok, ',')) wanted.insert(std::stoi(tok));
  }
  const std::vector<std::tuple<int, std::string, double, std::function<Outcome()>>> criteria{
      {1, "attention normalization", 30, [&] { return attention_normalization(); }},
      {2, "gradient correctness", 180, [&] { return gradient_correctness(ctx.work); }},
      {3, "metric oracle equivalence", 60, [&] { return metric_oracles(); }},
      {4, "gradient-flow consistency", 60, [&] { return gradient_flow(ctx.work); }},
      {5, "temporal dropout statistics", 30, [&] { return dropout_statistics(ctx.work); }},
      {6, "multimodality benefit", 600, [&] { return multimodality_benefit(ctx); }},
      {7, "cloud-robustness ordering", 900, [&] { return cloud_robustness(ctx); }},
      {8, "auxiliary-supervision direction", 600, [&] { return aux_direction(ctx); }},
      {9, "configuration-rule enforcement", 60, [&] { return config_rules(ctx); }},
      {10, "reproducibility", 300, [&] { return reproducibility(ctx); }},
  };
  int failures = 0;
  for (const auto& [id, name, budget, fn] : criteria) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (seconds > budget) {
      o.pass = false;
      o.detail += " [over the " + num(budget, 0) + " s budget]";
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " (" << num(seconds, 1)
              << " s)" << std::endl;
  }
  std::cout << (failures ? std::to_string(failures) + " criterion(s) failed" : "all selected criteria passed")
            << std::endl;
  return failures ? 1 : 0;
}
