#include "sitsfuse/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "sitsfuse/error.hpp"

namespace fs = std::filesystem;

namespace sitsfuse::analysis {

void require_sgd(const tasks::OptimizerConfig& optimizer) {
  if (optimizer.kind != "sgd" || optimizer.momentum != 0.0)
    throw ConfigError("gradient flow requires plain SGD (optimizer is '" + optimizer.kind +
                      (optimizer.momentum != 0.0 ? "' with momentum" : "'") +
                      "); the first-order estimate only holds for stochastic gradient steps");
}

namespace {

std::vector<Tensor> copy_grads(const nn::ParameterSet& params) {
  std::vector<Tensor> out;
  for (const auto& p : params.items()) out.push_back(p.var->grad_buffer());
  return out;
}

}  // namespace

GradientFlowRecord gradient_flow_probe(FusionModel& model, const Batch& batch, double lr,
                                       const tasks::OptimizerConfig& optimizer, std::size_t step) {
  require_sgd(optimizer);
  const ModelSpec& spec = model.spec();
  auto& params = model.parameters();
  const auto targets = batch_targets(batch, spec.task, spec.num_classes);
  params.zero_grad();
  const auto pred = model.forward(batch);
  const auto losses = fusion::compute_losses(pred, targets, kIgnoreTarget, spec.fusion);
  ad::backward(losses.total);
  const auto grad_total = copy_grads(params);
  params.zero_grad();
  ad::backward(losses.objective);

  GradientFlowRecord r;
  r.step = step;
  r.lr = lr;
  r.objective = losses.objective_value();
  r.modules = params.groups();
  r.values.assign(r.modules.size(), 0.0);
  const auto& items = params.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto g = nn::group_of(items[i].name);
    const std::size_t k = static_cast<std::size_t>(std::find(r.modules.begin(), r.modules.end(), g) - r.modules.begin());
    const Tensor& go = items[i].var->grad_buffer();
    double s = 0.0;
    for (std::size_t j = 0; j < go.size(); ++j) s += grad_total[i][j] * go[j];
    r.values[k] += s;
  }
  for (double v : r.values) r.total += v;
  if (r.total != 0.0)
    for (double v : r.values) r.fractions.push_back(v / r.total);
  params.zero_grad();
  return r;
}

FirstOrderCheck first_order_check(FusionModel& model, const Batch& batch, double lr) {
  const ModelSpec& spec = model.spec();
  auto& params = model.parameters();
  tasks::OptimizerConfig sgd;
  sgd.kind = "sgd";
  const GradientFlowRecord r = gradient_flow_probe(model, batch, lr, sgd);
  const auto targets = batch_targets(batch, spec.task, spec.num_classes);

  params.zero_grad();
  const auto pred = model.forward(batch);
  const auto losses = fusion::compute_losses(pred, targets, kIgnoreTarget, spec.fusion);
  ad::backward(losses.total);
  std::vector<Tensor> saved;
  for (const auto& p : params.items()) {
    saved.push_back(p.var->value);
    const Tensor& g = p.var->grad_buffer();
    for (std::size_t j = 0; j < g.size(); ++j) p.var->value[j] -= lr * g[j];
  }
  double after = 0.0;
  {
    ad::NoGradGuard guard;
    const auto pred2 = model.forward(batch);
    after = fusion::compute_losses(pred2, targets, kIgnoreTarget, spec.fusion).objective_value();
  }
  for (std::size_t i = 0; i < params.items().size(); ++i) params.items()[i].var->value = saved[i];
  params.zero_grad();
  return {r.predicted_decrease(), r.objective - after};
}

metrics::MetricReport cloud_ablation(const FusionModel& model, const tasks::Dataset& data, double keep_ratio,
                                     std::uint64_t seed, tasks::EvalOptions options) {
  tasks::kept_count(1, keep_ratio);  // validates the ratio
  options.keep_ratio = keep_ratio;
  options.ablation_seed = seed;
  return tasks::evaluate(model, data, options);
}

std::vector<double> default_grid() { return {1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1}; }

std::vector<RobustnessCurve> robustness_curve(
    const std::vector<std::pair<std::string, const FusionModel*>>& models, const tasks::Dataset& data,
    std::vector<double> grid, std::size_t repeats, std::uint64_t seed, const tasks::EvalOptions& options) {
  if (repeats < 3) throw ConfigError("robustness curves need at least 3 repeats");
  if (grid.empty()) throw ConfigError("robustness grid is empty");
  std::sort(grid.begin(), grid.end(), std::greater<>());
  std::vector<RobustnessCurve> out;
  for (const auto& [name, model] : models) {
    RobustnessCurve c;
    c.model = name;
    c.grid = grid;
    for (double r : grid) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t k = 0; k < repeats; ++k) {
        const std::uint64_t s = splitmix64(seed + k);
        const auto report = cloud_ablation(*model, data, r, s, options);
        c.points.push_back({r, k, s, report.miou, report.oa});
        sum += report.miou;
        sq += report.miou * report.miou;
      }
      const double n = static_cast<double>(repeats);
      const double mean = sum / n;
      c.mean_miou.push_back(mean);
      c.std_miou.push_back(std::sqrt(std::max(sq / n - mean * mean, 0.0)));
    }
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

std::string num(double v, int digits = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string cell(const std::optional<double>& v) { return v ? num(100.0 * *v, 1) : "-"; }

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

std::string line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Series>& series, bool reverse_x) {
  const double W = 640, H = 400, left = 60, right = 170, top = 40, bottom = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  auto px = [&](double x) {
    double f = (x - x0) / (x1 - x0);
    if (reverse_x) f = 1.0 - f;
    return left + f * (W - left - right);
  };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * (H - top - bottom); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    o << "<text x=\"" << left - 6 << "\" y=\"" << num(py(yv), 1) << "\" text-anchor=\"end\">" << num(yv, 3)
      << "</text>\n";
    o << "<text x=\"" << num(px(xv), 1) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">"
      << num(xv, 2) << "</text>\n";
  }
  o << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xlabel
    << "</text>\n";
  o << "<text x=\"16\" y=\"" << (top + H - bottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (top + H - bottom) / 2 << ")\">" << ylabel << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % 10];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : series[i].points) o << num(px(x), 2) << ',' << num(py(y), 2) << ' ';
    o << "\"/>\n";
    const double ly = top + 16.0 * static_cast<double>(i);
    o << "<line x1=\"" << W - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - right + 36 << "\" y=\"" << ly + 4 << "\">" << series[i].label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_rows(const fs::path& path, const std::string& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != header) throw FormatError(path.string() + ": unexpected header '" + line + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(split(line, ','));
  return rows;
}

}  // namespace

std::string flow_csv(const std::vector<GradientFlowRecord>& records) {
  std::ostringstream o;
  o << "step,module,value,fraction\n";
  for (const auto& r : records)
    for (std::size_t i = 0; i < r.modules.size(); ++i)
      o << r.step << ',' << r.modules[i] << ',' << num(r.values[i], 12) << ','
        << (r.fractions.empty() ? std::string("") : num(r.fractions[i], 9)) << '\n';
  return o.str();
}

std::string robustness_csv(const std::vector<RobustnessCurve>& curves) {
  std::ostringstream o;
  o << "model,ratio,repeat,seed,miou,oa\n";
  for (const auto& c : curves)
    for (const auto& p : c.points)
      o << c.model << ',' << num(p.ratio, 2) << ',' << p.repeat << ',' << p.seed << ',' << num(p.miou) << ','
        << num(p.oa) << '\n';
  return o.str();
}

std::string robustness_summary_csv(const std::vector<RobustnessCurve>& curves) {
  std::ostringstream o;
  o << "model,ratio,mean_miou,std_miou\n";
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.grid.size(); ++i)
      o << c.model << ',' << num(c.grid[i], 2) << ',' << num(c.mean_miou[i]) << ',' << num(c.std_miou[i]) << '\n';
  return o.str();
}

std::string table_csv(const std::vector<TableRow>& rows) {
  std::ostringstream o;
  o << "model,oa,miou_base,miou_tdrop,miou_aux,miou_aux_tdrop,params\n";
  for (const auto& r : rows) {
    o << r.model << ',' << cell(r.oa) << ',' << cell(r.base) << ',' << cell(r.tdrop) << ',' << cell(r.aux) << ','
      << cell(r.aux_tdrop) << ',' << r.params;
    if (r.params_aux) o << '/' << *r.params_aux;
    o << '\n';
  }
  return o.str();
}

std::string flow_svg(const std::vector<GradientFlowRecord>& records) {
  std::map<std::string, std::size_t> index;
  std::vector<Series> series;
  for (const auto& r : records) {
    if (r.fractions.empty()) continue;
    for (std::size_t i = 0; i < r.modules.size(); ++i) {
      auto [it, inserted] = index.emplace(r.modules[i], series.size());
      if (inserted) series.push_back({r.modules[i], {}});
      series[it->second].points.emplace_back(static_cast<double>(r.step), r.fractions[i]);
    }
  }
  return line_plot("Gradient flow", "step", "fraction of objective decrease", series, false);
}

std::string robustness_svg(const std::vector<RobustnessCurve>& curves) {
  std::vector<Series> series;
  for (const auto& c : curves) {
    Series s{c.model, {}};
    for (std::size_t i = 0; i < c.grid.size(); ++i) s.points.emplace_back(c.grid[i], 100.0 * c.mean_miou[i]);
    series.push_back(std::move(s));
  }
  return line_plot("Varying cloud cover", "ratio of optical acquisitions kept", "mIoU", series, true);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<fs::path> report_emit(const std::vector<GradientFlowRecord>& flow,
                                  const std::vector<RobustnessCurve>& curves, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  auto put = [&](const std::string& name, const std::string& text) {
    write_text(out_dir / name, text);
    written.push_back(out_dir / name);
  };
  if (!flow.empty()) {
    put("flow.csv", flow_csv(flow));
    put("flow.svg", flow_svg(flow));
  }
  if (!curves.empty()) {
    put("robustness.csv", robustness_csv(curves));
    put("robustness_summary.csv", robustness_summary_csv(curves));
    put("robustness.svg", robustness_svg(curves));
  }
  return written;
}

std::vector<GradientFlowRecord> read_flow_csv(const fs::path& path) {
  std::vector<GradientFlowRecord> out;
  for (const auto& row : read_rows(path, "step,module,value,fraction")) {
    if (row.size() < 3) throw FormatError(path.string() + ": short row");
    const std::size_t step = std::stoul(row[0]);
    if (out.empty() || out.back().step != step) {
      out.emplace_back();
      out.back().step = step;
    }
    auto& r = out.back();
    r.modules.push_back(row[1]);
    r.values.push_back(std::stod(row[2]));
    r.total += r.values.back();
    if (row.size() > 3 && !row[3].empty()) r.fractions.push_back(std::stod(row[3]));
  }
  return out;
}

std::vector<RobustnessCurve> read_robustness_csv(const fs::path& path) {
  std::vector<RobustnessCurve> out;
  for (const auto& row : read_rows(path, "model,ratio,repeat,seed,miou,oa")) {
    if (row.size() != 6) throw FormatError(path.string() + ": expected 6 columns");
    if (out.empty() || out.back().model != row[0]) {
      out.emplace_back();
      out.back().model = row[0];
    }
    out.back().points.push_back({std::stod(row[1]), std::stoul(row[2]), std::stoull(row[3]), std::stod(row[4]),
                                 std::stod(row[5])});
  }
  for (auto& c : out) {
    std::map<double, std::vector<double>, std::greater<>> by_ratio;
    for (const auto& p : c.points) by_ratio[p.ratio].push_back(p.miou);
    for (const auto& [r, v] : by_ratio) {
      double sum = 0, sq = 0;
      for (double x : v) sum += x, sq += x * x;
      const double n = static_cast<double>(v.size()), mean = sum / n;
      c.grid.push_back(r);
      c.mean_miou.push_back(mean);
      c.std_miou.push_back(std::sqrt(std::max(sq / n - mean * mean, 0.0)));
    }
  }
  return out;
}

}  // namespace sitsfuse::analysis
