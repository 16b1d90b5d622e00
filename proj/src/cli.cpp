#include "sitsfuse/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "sitsfuse/analysis.hpp"
#include "sitsfuse/error.hpp"
#include "sitsfuse/experiment.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace sitsfuse {

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return json::parse(in);
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, double>)
        out.push_back(std::stod(item, &used));
      else
        out.push_back(static_cast<T>(std::stoll(item, &used)));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

int modality_id(const std::string& token, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == token) return static_cast<int>(i);
  try {
    std::size_t used = 0;
    const int id = std::stoi(token, &used);
    if (used == token.size()) return id;
  } catch (const std::exception&) {
  }
  throw ConfigError("unknown modality '" + token + "'");
}

/// Experiment flags shared by train, gradflow and benchmark. Flags win over the config file.
struct ExperimentFlags {
  std::string config, dataset, out, task, scheme, modalities, optimizer;
  std::uint64_t seed = 0;
  std::size_t epochs = 0, batch_size = 0;
  double lr = 0.0;
  bool aux = false, no_aux = false, tdrop = false, no_tdrop = false;
  CLI::Option *seed_opt = nullptr, *epochs_opt = nullptr, *batch_opt = nullptr, *lr_opt = nullptr;

  void attach(CLI::App& app) {
    app.add_option("-c,--config", config, "experiment config (JSON)");
    app.add_option("--dataset", dataset, "dataset root");
    app.add_option("-o,--out", out, "output directory");
    seed_opt = app.add_option("--seed", seed, "global seed");
    app.add_option("--task", task, "parcel | semantic");
    app.add_option("--scheme", scheme, "single | early | mid | late | decision");
    app.add_option("--modalities", modalities, "comma-separated modality names or ids");
    epochs_opt = app.add_option("--epochs", epochs);
    batch_opt = app.add_option("--batch-size", batch_size);
    lr_opt = app.add_option("--lr", lr);
    app.add_option("--optimizer", optimizer, "adam | sgd");
    app.add_flag("--aux", aux, "enable auxiliary supervision");
    app.add_flag("--no-aux", no_aux);
    app.add_flag("--tdrop", tdrop, "enable temporal dropout");
    app.add_flag("--no-tdrop", no_tdrop);
  }

  void apply(ExperimentConfig& c) const {
    if (!dataset.empty()) c.dataset = fs::path(dataset);
    if (!out.empty()) c.output = fs::path(out);
    if (seed_opt->count()) c.set_seed(seed);
    if (!task.empty()) c.set_task(fusion::task_from_string(task));
    auto& f = c.model.fusion;
    if (!scheme.empty()) {
      f.scheme = fusion::scheme_from_string(scheme);
      if (f.scheme == fusion::Scheme::single && modalities.empty() && f.modalities.size() != 1)
        f.modalities = {f.target_modality};
      if (f.scheme != fusion::Scheme::single && modalities.empty() && f.modalities.size() < 2) {
        f.modalities.clear();
        for (std::size_t m = 0; m < c.model.channels.size(); ++m) f.modalities.push_back(static_cast<int>(m));
      }
    }
    if (!modalities.empty()) {
      f.modalities.clear();
      std::stringstream ss(modalities);
      std::string tok;
      while (std::getline(ss, tok, ','))
        if (!tok.empty()) f.modalities.push_back(modality_id(tok, c.model.modality_names));
    }
    if (aux) f.aux_enabled = true;
    if (no_aux) f.aux_enabled = false;
    if (tdrop) f.temporal_dropout = true;
    if (no_tdrop) f.temporal_dropout = false;
    if (epochs_opt->count()) c.train.epochs = epochs;
    if (batch_opt->count()) c.train.batch_size = batch_size;
    if (!optimizer.empty()) c.train.optimizer.kind = optimizer;
    if (lr_opt->count()) c.train.optimizer.lr = lr;
    c.validate();
  }

  ExperimentConfig load() const {
    ExperimentConfig c;
    if (!config.empty()) {
      c = load_experiment(config);
    } else {
      json j = json::object();
      j["synth"] = synth::SynthConfig{}.to_json();
      c = ExperimentConfig::from_json(j);
    }
    apply(c);
    return c;
  }
};

tasks::EvalOptions eval_options(const ExperimentConfig& c) {
  tasks::EvalOptions o;
  o.batch_size = c.train.task == fusion::Task::parcel ? 128 : c.train.batch_size;
  o.sample_size = c.model.pse.sample_size;
  o.seed = c.seed;
  return o;
}

void print_report(std::ostream& out, const std::string& label, const metrics::MetricReport& r) {
  out << label << "OA " << fixed(100.0 * r.oa, 2) << "  mIoU " << fixed(100.0 * r.miou, 2) << '\n';
}

struct RunResult {
  metrics::MetricReport report;
  std::size_t params = 0;
};

/// Trains into `run_dir` (config.json, checkpoint/, history.json, metrics.{json,csv}).
RunResult run_training(const ExperimentConfig& cfg, const tasks::Dataset& train_set, const tasks::Dataset& test_set,
                       const fs::path& run_dir, std::ostream& out, const tasks::Checkpoint* resume = nullptr) {
  fs::create_directories(run_dir);
  write_json(run_dir / "config.json", cfg.to_json());
  tasks::TrainHooks hooks;
  hooks.on_epoch = [&](const tasks::HistoryRecord& r) {
    out << "epoch " << r.epoch << "/" << cfg.train.epochs << "  loss " << fixed(r.loss) << "  lr "
        << r.lr;
    if (r.eval_miou) out << "  test mIoU " << fixed(100.0 * *r.eval_miou, 2);
    out << '\n';
  };
  const auto ckpt = tasks::train(cfg.model, cfg.train, train_set, &test_set, hooks, resume);
  tasks::save_checkpoint(ckpt, run_dir / "checkpoint");
  tasks::write_history(ckpt.history, run_dir / "history.json");
  const auto model = tasks::restore_model(ckpt);
  RunResult result{tasks::evaluate(*model, test_set, eval_options(cfg)), model->parameters().scalar_count()};
  result.report.write(run_dir / "metrics.json", run_dir / "metrics.csv");
  return result;
}

ExperimentConfig run_config(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "config.json")) throw ConfigError(run_dir.string() + " is not a run directory");
  return ExperimentConfig::from_json(read_json(run_dir / "config.json"));
}

// ---- subcommands ----

int cmd_synth(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
              std::optional<std::size_t> patches, const std::string& plan, bool force, std::ostream& out) {
  synth::SynthConfig sc;
  std::optional<fs::path> configured;
  if (!config_path.empty()) {
    const auto c = load_experiment(config_path);
    if (!c.synth) throw ConfigError(config_path + " has no synth section");
    sc = *c.synth;
    configured = c.dataset;
  }
  if (seed) sc.seed = *seed;
  if (patches) sc.n_patches = *patches;
  if (!plan.empty()) {
    json j = sc.to_json();
    j["plan"]["kind"] = plan;
    sc = synth::SynthConfig::from_json(j);
  }
  sc.validate();
  const fs::path root = !out_dir.empty() ? fs::path(out_dir) : configured ? *configured : output_root() / "synth";
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw ConfigError(root.string() + " already exists; pass --force to overwrite");
    fs::remove_all(root);
  }
  const auto manifest = synth::generate_dataset(sc, root);
  out << "wrote " << manifest.patch_ids.size() << " patches to " << root.string() << '\n';
  return kExitOk;
}

int cmd_train(const ExperimentFlags& flags, bool resume, bool force, std::ostream& out) {
  ExperimentConfig cfg = flags.load();
  const fs::path run_dir = cfg.output;
  std::optional<tasks::Checkpoint> ckpt;
  if (resume) {
    if (!fs::exists(run_dir / "checkpoint" / "index.json"))
      throw ConfigError("--resume: no checkpoint in " + run_dir.string());
    ExperimentConfig saved = run_config(run_dir);
    if (flags.epochs_opt->count()) saved.train.epochs = flags.epochs;
    saved.validate();
    cfg = saved;
    ckpt = tasks::load_checkpoint(run_dir / "checkpoint");
    if (ckpt->epoch >= cfg.train.epochs)
      throw ConfigError("checkpoint already has " + std::to_string(ckpt->epoch) + " epochs; raise --epochs");
    out << "resuming from epoch " << ckpt->epoch << '\n';
  } else if (fs::exists(run_dir / "checkpoint") && !force) {
    throw ConfigError(run_dir.string() + " already holds a run; use --resume or --force");
  }
  const auto manifest = prepare_dataset(cfg);
  if (ckpt) ckpt->train.epochs = cfg.train.epochs;
  const auto train_set = tasks::load_dataset(manifest, cfg.train.train_folds, cfg.train.task);
  const std::vector<int> test_folds{cfg.train.test_fold};
  const auto test_set = tasks::load_dataset(manifest, test_folds, cfg.train.task);
  const auto result = run_training(cfg, train_set, test_set, run_dir, out, ckpt ? &*ckpt : nullptr);
  print_report(out, "test fold " + std::to_string(cfg.train.test_fold) + ": ", result.report);
  out << "run written to " << run_dir.string() << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& run, const std::string& dataset, const std::string& folds,
             std::optional<double> keep_ratio, const std::string& out_dir, std::ostream& out) {
  const fs::path run_dir(run);
  ExperimentConfig cfg = run_config(run_dir);
  if (!dataset.empty()) cfg.dataset = fs::path(dataset);
  const auto manifest = prepare_dataset(cfg);
  const auto ckpt = tasks::load_checkpoint(run_dir / "checkpoint");
  const auto model = tasks::restore_model(ckpt);
  const std::vector<int> fold_list = folds.empty() ? std::vector<int>{cfg.train.test_fold} : parse_list<int>(folds, "fold");
  const auto data = tasks::load_dataset(manifest, fold_list, cfg.train.task);
  auto opts = eval_options(cfg);
  const auto report = keep_ratio ? analysis::cloud_ablation(*model, data, *keep_ratio, cfg.seed, opts)
                                 : tasks::evaluate(*model, data, opts);
  const fs::path dir = out_dir.empty() ? run_dir : fs::path(out_dir);
  fs::create_directories(dir);
  report.write(dir / "eval.json", dir / "eval.csv");
  print_report(out, "", report);
  return kExitOk;
}

int cmd_ablate(const std::vector<std::string>& runs, const std::string& ratios, std::size_t repeats,
               std::optional<std::uint64_t> seed, const std::string& out_dir, std::ostream& out) {
  const auto grid = ratios.empty() ? analysis::default_grid() : parse_list<double>(ratios, "ratio");
  for (double r : grid)
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("keep ratios must lie in (0, 1]");
  std::vector<std::pair<std::string, fs::path>> named;
  for (const auto& r : runs) {
    const auto eq = r.find('=');
    if (eq == std::string::npos)
      named.emplace_back(fs::path(r).filename().string(), fs::path(r));
    else
      named.emplace_back(r.substr(0, eq), fs::path(r.substr(eq + 1)));
  }
  ExperimentConfig cfg = run_config(named.front().second);
  const auto manifest = prepare_dataset(cfg);
  const std::vector<int> test_folds{cfg.train.test_fold};
  const auto data = tasks::load_dataset(manifest, test_folds, cfg.train.task);
  std::vector<std::unique_ptr<FusionModel>> models;
  std::vector<std::pair<std::string, const FusionModel*>> refs;
  for (const auto& [name, dir] : named) {
    const auto rc = run_config(dir);
    if (rc.train.task != cfg.train.task) throw ConfigError("runs mix parcel and semantic tasks");
    models.push_back(tasks::restore_model(tasks::load_checkpoint(dir / "checkpoint")));
    refs.emplace_back(name, models.back().get());
  }
  const auto curves =
      analysis::robustness_curve(refs, data, grid, repeats, seed.value_or(cfg.seed), eval_options(cfg));
  const fs::path dir = out_dir.empty() ? output_root() / "ablation" : fs::path(out_dir);
  analysis::report_emit({}, curves, dir);
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.grid.size(); ++i)
      out << c.model << "  ratio " << fixed(c.grid[i], 2) << "  mIoU " << fixed(100.0 * c.mean_miou[i], 2)
          << " +- " << fixed(100.0 * c.std_miou[i], 2) << '\n';
  out << "wrote " << (dir / "robustness.csv").string() << '\n';
  return kExitOk;
}

int cmd_gradflow(const ExperimentFlags& flags, const std::string& run, std::size_t every, std::ostream& out) {
  ExperimentConfig cfg;
  if (!run.empty()) {
    cfg = run_config(run);
    flags.apply(cfg);
  } else {
    cfg = flags.load();
  }
  analysis::require_sgd(cfg.train.optimizer);
  if (every == 0) throw ConfigError("--every must be positive");
  const auto manifest = prepare_dataset(cfg);
  const auto train_set = tasks::load_dataset(manifest, cfg.train.train_folds, cfg.train.task);
  const std::size_t per_epoch = (train_set.size() + cfg.train.batch_size - 1) / cfg.train.batch_size;
  std::vector<analysis::GradientFlowRecord> records;
  tasks::TrainHooks hooks;
  hooks.before_step = [&](std::size_t step, FusionModel& model, const Batch& batch) {
    if (step % every) return;
    const double lr = cfg.train.optimizer.lr_at(step / std::max<std::size_t>(per_epoch, 1));
    records.push_back(analysis::gradient_flow_probe(model, batch, lr, cfg.train.optimizer, step));
  };
  hooks.on_epoch = [&](const tasks::HistoryRecord& r) {
    out << "epoch " << r.epoch << "/" << cfg.train.epochs << "  loss " << fixed(r.loss) << '\n';
  };
  tasks::train(cfg.model, cfg.train, train_set, nullptr, hooks);
  const fs::path dir = flags.out.empty() ? cfg.output / "gradflow" : fs::path(flags.out);
  analysis::report_emit(records, {}, dir);
  out << "probed " << records.size() << " steps; wrote " << (dir / "flow.csv").string() << '\n';
  return kExitOk;
}

int cmd_report(const std::string& flow, const std::string& robustness, const std::string& out_dir,
               std::ostream& out) {
  if (flow.empty() && robustness.empty()) throw ConfigError("report needs --flow and/or --robustness");
  const auto records = flow.empty() ? std::vector<analysis::GradientFlowRecord>{} : analysis::read_flow_csv(flow);
  const auto curves =
      robustness.empty() ? std::vector<analysis::RobustnessCurve>{} : analysis::read_robustness_csv(robustness);
  const fs::path dir = out_dir.empty() ? output_root() / "report" : fs::path(out_dir);
  for (const auto& p : analysis::report_emit(records, curves, dir)) out << p.string() << '\n';
  return kExitOk;
}

struct BenchRow {
  std::string name;
  fusion::Scheme scheme;
  std::vector<int> modalities;
};

int cmd_benchmark(const ExperimentFlags& flags, const std::string& rows_arg, const std::string& variants_arg,
                  std::size_t jobs, std::ostream& out) {
  if (jobs == 0) throw ConfigError("--jobs must be positive");
  ExperimentConfig base = flags.load();
  if (flags.out.empty() && flags.config.empty()) base.output = output_root() / "benchmark";
  const auto manifest = prepare_dataset(base);
  const auto& names = base.model.modality_names;
  std::vector<BenchRow> rows;
  std::vector<int> all;
  for (std::size_t m = 0; m < names.size(); ++m) {
    rows.push_back({names[m], fusion::Scheme::single, {static_cast<int>(m)}});
    all.push_back(static_cast<int>(m));
  }
  for (auto s : {fusion::Scheme::early, fusion::Scheme::mid, fusion::Scheme::late, fusion::Scheme::decision})
    rows.push_back({fusion::to_string(s), s, all});
  if (!rows_arg.empty()) {
    std::vector<BenchRow> keep;
    std::stringstream ss(rows_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      auto it = std::find_if(rows.begin(), rows.end(), [&](const BenchRow& r) { return r.name == tok; });
      if (it == rows.end()) throw ConfigError("unknown benchmark row '" + tok + "'");
      keep.push_back(*it);
    }
    rows = keep;
  }
  const std::vector<std::string> known{"base", "tdrop", "aux", "aux_tdrop"};
  std::vector<std::string> variants = known;
  if (!variants_arg.empty()) {
    variants.clear();
    std::stringstream ss(variants_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (std::find(known.begin(), known.end(), tok) == known.end())
        throw ConfigError("unknown benchmark variant '" + tok + "'");
      variants.push_back(tok);
    }
  }
  const auto train_set = tasks::load_dataset(manifest, base.train.train_folds, base.train.task);
  const std::vector<int> test_folds{base.train.test_fold};
  const auto test_set = tasks::load_dataset(manifest, test_folds, base.train.task);

  std::vector<analysis::TableRow> table;
  json summary = json::array();
  for (const auto& row : rows) {
    analysis::TableRow tr;
    tr.model = row.name;
    for (const auto& v : variants) {
      ExperimentConfig cfg = base;
      auto& f = cfg.model.fusion;
      f.scheme = row.scheme;
      f.modalities = row.modalities;
      f.aux_enabled = v == "aux" || v == "aux_tdrop";
      f.temporal_dropout = v == "tdrop" || v == "aux_tdrop";
      try {
        cfg.model.validate();
      } catch (const ConfigError& e) {
        out << row.name << " / " << v << ": -  (" << e.what() << ")\n";
        continue;
      }
      cfg.output = base.output / (row.name + "-" + v);
      const auto result = run_training(cfg, train_set, test_set, cfg.output, out);
      out << row.name << " / " << v << ": mIoU " << fixed(100.0 * result.report.miou, 2) << "  params "
          << result.params << '\n';
      summary.push_back({{"model", row.name},
                         {"variant", v},
                         {"oa", result.report.oa},
                         {"miou", result.report.miou},
                         {"params", result.params}});
      if (v == "base") {
        tr.base = result.report.miou;
        tr.oa = result.report.oa;
        tr.params = result.params;
      } else if (v == "tdrop") {
        tr.tdrop = result.report.miou;
      } else if (v == "aux") {
        tr.aux = result.report.miou;
      } else {
        tr.aux_tdrop = result.report.miou;
      }
      if (f.aux_enabled && !tr.params_aux) tr.params_aux = result.params;
      if (!tr.params) tr.params = f.aux_enabled ? 0 : result.params;
    }
    if (tr.params_aux && *tr.params_aux == tr.params) tr.params_aux.reset();
    table.push_back(tr);
  }
  fs::create_directories(base.output);
  analysis::write_text(base.output / "table.csv", analysis::table_csv(table));
  write_json(base.output / "summary.json", summary);
  out << analysis::table_csv(table);
  return kExitOk;
}

int cmd_folds(const std::string& dataset, std::optional<int> n_folds, std::optional<std::uint64_t> seed, bool write,
              std::ostream& out) {
  auto manifest = load_manifest(dataset);
  if (n_folds || seed) {
    manifest.folds = make_folds(manifest.patch_ids, n_folds.value_or(5), seed.value_or(0));
    if (write) save_manifest(manifest, dataset);
  }
  std::map<int, std::size_t> counts;
  out << "patch_id,fold\n";
  for (const auto& id : manifest.patch_ids) {
    out << id << ',' << manifest.folds.at(id) << '\n';
    ++counts[manifest.folds.at(id)];
  }
  for (const auto& [fold, n] : counts) out << "# fold " << fold << ": " << n << " patches\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal satellite image time series fusion toolkit", "sitsfuse"};
  app.require_subcommand(1);

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_config, synth_out, synth_plan;
  std::uint64_t synth_seed = 0;
  std::size_t synth_patches = 0;
  bool synth_force = false;
  synth_cmd->add_option("-c,--config", synth_config);
  synth_cmd->add_option("-o,--out", synth_out, "dataset root");
  auto* synth_seed_opt = synth_cmd->add_option("--seed", synth_seed);
  auto* synth_patches_opt = synth_cmd->add_option("--patches", synth_patches);
  synth_cmd->add_option("--plan", synth_plan, "complementary | optical_dominant | none");
  synth_cmd->add_flag("--force", synth_force, "overwrite an existing dataset");

  auto* train_cmd = app.add_subcommand("train", "train one model");
  ExperimentFlags train_flags;
  train_flags.attach(*train_cmd);
  bool resume = false, train_force = false;
  train_cmd->add_flag("--resume", resume, "continue the checkpoint in the output directory");
  train_cmd->add_flag("--force", train_force, "overwrite an existing run");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained run");
  std::string eval_run, eval_dataset, eval_folds, eval_out;
  double eval_keep = 1.0;
  eval_cmd->add_option("run", eval_run, "run directory")->required();
  eval_cmd->add_option("--dataset", eval_dataset);
  eval_cmd->add_option("--folds", eval_folds, "comma-separated folds (default: test fold)");
  auto* eval_keep_opt = eval_cmd->add_option("--keep-ratio", eval_keep, "optical keep ratio");
  eval_cmd->add_option("-o,--out", eval_out);

  auto* ablate_cmd = app.add_subcommand("ablate", "varying cloud cover ablation");
  std::vector<std::string> ablate_runs;
  std::string ablate_ratios, ablate_out;
  std::size_t ablate_repeats = 3;
  std::uint64_t ablate_seed = 0;
  ablate_cmd->add_option("runs", ablate_runs, "run directories, optionally name=dir")->required();
  ablate_cmd->add_option("--ratios", ablate_ratios, "e.g. 1.0,0.5,0.1");
  ablate_cmd->add_option("--repeats", ablate_repeats);
  auto* ablate_seed_opt = ablate_cmd->add_option("--seed", ablate_seed);
  ablate_cmd->add_option("-o,--out", ablate_out);

  auto* flow_cmd = app.add_subcommand("gradflow", "gradient flow probe during SGD training");
  ExperimentFlags flow_flags;
  flow_flags.attach(*flow_cmd);
  std::string flow_run;
  std::size_t flow_every = 1;
  flow_cmd->add_option("--run", flow_run, "take the config of an existing run");
  flow_cmd->add_option("--every", flow_every, "probe every n steps");

  auto* report_cmd = app.add_subcommand("report", "render plots from result CSVs");
  std::string report_flow, report_rob, report_out;
  report_cmd->add_option("--flow", report_flow);
  report_cmd->add_option("--robustness", report_rob);
  report_cmd->add_option("-o,--out", report_out);

  auto* bench_cmd = app.add_subcommand("benchmark", "train the model matrix and emit the results table");
  ExperimentFlags bench_flags;
  bench_flags.attach(*bench_cmd);
  std::string bench_rows, bench_variants;
  std::size_t bench_jobs = 1;
  bench_cmd->add_option("--rows", bench_rows, "subset of rows, e.g. S2,late");
  bench_cmd->add_option("--variants", bench_variants, "subset of base,tdrop,aux,aux_tdrop");
  bench_cmd->add_option("--jobs", bench_jobs, "accepted for compatibility; runs are sequential");

  auto* folds_cmd = app.add_subcommand("folds", "show or reassign dataset folds");
  std::string folds_dataset;
  int folds_n = 5;
  std::uint64_t folds_seed = 0;
  bool folds_write = false;
  folds_cmd->add_option("dataset", folds_dataset)->required();
  auto* folds_n_opt = folds_cmd->add_option("--n", folds_n);
  auto* folds_seed_opt = folds_cmd->add_option("--seed", folds_seed);
  folds_cmd->add_flag("--write", folds_write, "store the new assignment in the manifest");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto opt_of = [](CLI::Option* o, auto v) { return o->count() ? std::optional(v) : std::nullopt; };
  try {
    if (*synth_cmd)
      return cmd_synth(synth_config, synth_out, opt_of(synth_seed_opt, synth_seed),
                       opt_of(synth_patches_opt, synth_patches), synth_plan, synth_force, out);
    if (*train_cmd) return cmd_train(train_flags, resume, train_force, out);
    if (*eval_cmd)
      return cmd_eval(eval_run, eval_dataset, eval_folds, opt_of(eval_keep_opt, eval_keep), eval_out, out);
    if (*ablate_cmd)
      return cmd_ablate(ablate_runs, ablate_ratios, ablate_repeats, opt_of(ablate_seed_opt, ablate_seed),
                        ablate_out, out);
    if (*flow_cmd) return cmd_gradflow(flow_flags, flow_run, flow_every, out);
    if (*report_cmd) return cmd_report(report_flow, report_rob, report_out, out);
    if (*bench_cmd) return cmd_benchmark(bench_flags, bench_rows, bench_variants, bench_jobs, out);
    if (*folds_cmd)
      return cmd_folds(folds_dataset, opt_of(folds_n_opt, folds_n), opt_of(folds_seed_opt, folds_seed),
                       folds_write, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace sitsfuse
