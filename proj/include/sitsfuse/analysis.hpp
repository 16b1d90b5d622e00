#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sitsfuse/model.hpp"
#include "sitsfuse/tasks.hpp"

namespace sitsfuse::analysis {

struct GradientFlowRecord {
  std::size_t step = 0;
  double lr = 0.0;
  std::vector<std::string> modules;
  std::vector<double> values;  // Σ over module parameters of ∂L/∂θ · ∂L_obj/∂θ
  double total = 0.0;
  /// values / total; empty when total == 0 (undefined).
  std::vector<double> fractions;
  double objective = 0.0;  // L_obj on the probed batch

  double predicted_decrease() const { return lr * total; }
};

/// Throws ConfigError unless the optimizer is plain SGD.
void require_sgd(const tasks::OptimizerConfig& optimizer);

/// Two backward passes (total loss, objective loss) on one batch. Parameters are
/// left untouched and gradients are zeroed afterwards.
GradientFlowRecord gradient_flow_probe(FusionModel& model, const Batch& batch, double lr,
                                       const tasks::OptimizerConfig& optimizer, std::size_t step = 0);

struct FirstOrderCheck {
  double predicted = 0.0;  // η⟨∇L, ∇L_obj⟩
  double measured = 0.0;   // L_obj(θ) − L_obj(θ − η∇L)
  double error() const { return measured - predicted; }
};

/// Applies one SGD step of size `lr` on the total loss, measures the objective
/// decrease on the same batch, then restores the parameters.
FirstOrderCheck first_order_check(FusionModel& model, const Batch& batch, double lr);

/// Evaluation with ⌈keep_ratio·T_0⌉ optical acquisitions per sample; radar untouched.
metrics::MetricReport cloud_ablation(const FusionModel& model, const tasks::Dataset& data,
                                     double keep_ratio, std::uint64_t seed,
                                     tasks::EvalOptions options);

struct RobustnessPoint {
  double ratio = 1.0;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  double miou = 0.0, oa = 0.0;
};

struct RobustnessCurve {
  std::string model;
  std::vector<double> grid;  // descending
  std::vector<double> mean_miou, std_miou;
  std::vector<RobustnessPoint> points;
};

std::vector<double> default_grid();

std::vector<RobustnessCurve> robustness_curve(
    const std::vector<std::pair<std::string, const FusionModel*>>& models, const tasks::Dataset& data,
    std::vector<double> grid, std::size_t repeats, std::uint64_t seed, const tasks::EvalOptions& options);

/// One row of the benchmark table; empty optionals render as "-".
struct TableRow {
  std::string model;
  std::optional<double> oa, base, tdrop, aux, aux_tdrop;
  std::size_t params = 0;
  std::optional<std::size_t> params_aux;
};

std::string flow_csv(const std::vector<GradientFlowRecord>& records);
std::string robustness_csv(const std::vector<RobustnessCurve>& curves);
std::string robustness_summary_csv(const std::vector<RobustnessCurve>& curves);
std::string table_csv(const std::vector<TableRow>& rows);
std::string flow_svg(const std::vector<GradientFlowRecord>& records);
std::string robustness_svg(const std::vector<RobustnessCurve>& curves);

/// Writes flow.csv/flow.svg and robustness.csv/robustness_summary.csv/robustness.svg
/// for whichever inputs are non-empty. Creates `out_dir`. Returns the files written.
std::vector<std::filesystem::path> report_emit(const std::vector<GradientFlowRecord>& flow,
                                               const std::vector<RobustnessCurve>& curves,
                                               const std::filesystem::path& out_dir);

void write_text(const std::filesystem::path& path, const std::string& text);

std::vector<GradientFlowRecord> read_flow_csv(const std::filesystem::path& path);
std::vector<RobustnessCurve> read_robustness_csv(const std::filesystem::path& path);

}  // namespace sitsfuse::analysis
