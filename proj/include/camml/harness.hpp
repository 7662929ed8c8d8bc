#pragma once

#include <optional>
#include <string>
#include <vector>

#include "camml/config.hpp"

namespace camml {

// CSV (header + rows) plus a JSON sidecar embedding the full RunConfig and
// build id. Every results file goes through this.
void write_results(const std::string& out_dir, const std::string& name,
                   const std::string& csv_header, const std::vector<std::string>& csv_rows,
                   const RunConfig& cfg, const nlohmann::json& extra);

struct TrainOutcome {
  TrainResult result;
  double eval_accuracy = 0.0;
  double control_accuracy = 0.0;  // zero-prefix control
  size_t trainable_elements = 0;
  double median_step_ms = 0.0;
};

// Builds dataset + index + pipeline from the config, trains, evaluates
// (retrieved contexts and the zero-prefix control) and optionally saves the
// checkpoint, index and train log into out_dir.
TrainOutcome run_training(const RunConfig& cfg, const std::string& out_dir,
                          bool write_artifacts);

struct EvalRow {
  size_t shots = 0;
  double accuracy = 0.0;
};

struct EvalOutcome {
  std::vector<EvalRow> rows;
  std::vector<GenerationRecord> generations;  // from the last shots entry
};

EvalOutcome run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                     const std::vector<size_t>& shots_list, const std::string& out_dir);

struct AblationRow {
  std::string variant;
  double accuracy = 0.0;
  double final_loss = 0.0;
  double published_reference = 0.0;  // documentation only, not reproducible here
};

struct AblationOutcome {
  std::vector<AblationRow> variants;  // the five perceiver variants
  double control_accuracy = 0.0;      // zero-prefix control of the full model
};

// Runs {full, no_perceiver, no_vp, no_lp} x shared plus the unshared-CP
// variant with matched seeds and step budgets.
AblationOutcome run_ablation(const RunConfig& cfg, const std::string& out_dir);

struct SweepAxis {
  enum class Kind { layers, m, hidden } kind = Kind::layers;
  static Kind kind_from_name(const std::string& name);
};

struct SweepRow {
  size_t value = 0;
  double accuracy = 0.0;
  size_t prefix_tokens = 0;
  size_t trainable_elements = 0;
  double median_step_ms = 0.0;
};

std::vector<SweepRow> run_sweep(const RunConfig& cfg, SweepAxis::Kind axis,
                                const std::vector<size_t>& values, const std::string& out_dir);

struct CostRow {
  size_t shots = 0;
  size_t prefix_tokens = 0;
  double median_forward_ms = 0.0;
  uint64_t peak_alloc_bytes = 0;
  bool overflow = false;
  std::vector<double> raw_ms;
};

struct CostReport {
  std::string variant;  // "camml" or "no_perceiver"
  std::vector<CostRow> rows;
};

// Fig-4-right style benchmark: prefix length and generator forward time for
// the fixed-budget model vs the raw-concatenation baseline on homogeneous
// samples, medians over timed runs after warmups.
std::pair<CostReport, CostReport> run_bench_cost(const RunConfig& cfg,
                                                 const std::vector<size_t>& shots_list,
                                                 const std::string& out_dir,
                                                 size_t timed_runs = 20, size_t warmups = 3);

}  // namespace camml
