#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pathprox/checkpoint.hpp"
#include "pathprox/data.hpp"
#include "pathprox/grouping.hpp"
#include "pathprox/network.hpp"
#include "pathprox/optimizers.hpp"
#include "pathprox/regularization.hpp"

namespace pathprox {

// What to train on and which model to build. The dataset decides the class
// count; image dimensions come from the data, so a CNN task needs an IDX
// source. Normalization applies to IDX features only (the synthetic task is
// standardized by construction).
struct TaskConfig {
  std::string dataset = "synthetic";  // "synthetic" | "idx"

  std::size_t synthetic_n = 500;
  double synthetic_noise = 0.4;
  double synthetic_outliers = 0.0;

  std::string idx_images, idx_labels;
  std::string idx_test_images, idx_test_labels;  // optional held-out set
  std::size_t subsample_per_class = 0;           // 0 = keep everything
  bool normalize = true;

  std::size_t val_size = 0;  // 0 = no validation split

  std::string model = "mlp";  // "mlp" | "toy_cnn"
  std::size_t mlp_depth = 2, mlp_width = 64;
  bool factorized = true;
  ToyCnnOptions cnn;  // input_h/w and output_dim are filled from the data
  bool include_bias_in_unit = false;

  void validate() const;
};

struct ExperimentConfig {
  TaskConfig task;
  OptimizerConfig optimizer;
  std::size_t iterations = 1000;
  std::size_t eval_interval = 100;
  std::size_t batch_size = 0;  // 0 = full batch
  double sparsity_threshold = 1e-5;
  std::vector<std::size_t> checkpoint_schedule;  // prune runs only
  std::size_t retrain_iterations = 0;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  bool record_timing = false;  // timing breaks byte-for-byte CSV reproducibility
  std::string resume_from;

  void validate() const;
};

// JSON round trip for configs. parse_config resolves defaults (in particular
// the default schedule: step decay x0.1 at 50% and 75% of the iteration
// budget) so the echoed effective config is self-contained.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

const char* algorithm_name(Algorithm a);
Algorithm algorithm_from_name(const std::string& name);

// Dataset + model resolved from a task description. val/test may be empty.
struct LoadedTask {
  NetworkSpec spec;
  GroupingScheme scheme;
  Dataset train, val, test;
};
LoadedTask load_task(const TaskConfig& task, std::uint64_t seed);

struct MetricsRecord {
  std::size_t iteration = 0;
  double gamma = 0.0;
  double data_loss = 0.0;
  double f = 0.0;        // data loss + (lambda/2) R
  double g = 0.0;        // data loss + lambda R~
  double r = 0.0;        // sum of squared regularized weights
  double r_tilde = 0.0;  // path-norm regularizer
  double active_pct = 0.0;
  std::vector<double> group_totals;
  double train_accuracy = 0.0;
  std::optional<double> val_accuracy;
  std::optional<double> test_accuracy;
  std::int64_t ms = 0;
};

struct TrainingArtifacts {
  LoadedTask task;
  WeightStore store;       // final weights
  WeightStore best_store;  // best-validation weights (final weights without a val set)
  std::size_t best_iteration = 0;
  std::vector<MetricsRecord> metrics;
  std::string metrics_path, final_checkpoint_path, best_checkpoint_path;
};

// Runs the configured optimizer for `iterations` steps, logging metrics every
// eval_interval iterations (and at the last one) to <output_dir>/metrics.csv,
// echoing the effective config, and writing final/best checkpoints. Resuming
// from a checkpoint replays the identical trajectory of the uninterrupted run.
// DivergenceError propagates after flushing the partial log.
TrainingArtifacts run_training(const ExperimentConfig& cfg);

struct PruneRow {
  std::size_t checkpoint_iteration = 0;
  double sparsity = 0.0;  // fraction of units inactive at deactivation time
  double test_accuracy = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> deactivated;  // (group, unit)
  std::vector<double> products_at_deactivation;                  // ||w|| ||v|| per entry
  FrozenMask frozen_at_deactivation;  // mask right after thresholding, before retrain
  WeightStore store_after_retrain;
  FrozenMask frozen_after_retrain;
};

struct PruneResult {
  std::vector<PruneRow> rows;
  TrainingArtifacts main_run;
  std::string table_path;
};

// Trains with on-the-fly freezing of exactly-zeroed units, snapshots at each
// scheduled iteration, then per snapshot deactivates units whose path norm
// ||w|| ||v|| falls below the sparsity threshold, retrains with the mask
// frozen, and records (sparsity, test accuracy). Requires a grouped model.
PruneResult prune_retrain(const ExperimentConfig& cfg);

struct CompareResult {
  std::vector<std::string> names;
  std::vector<std::vector<double>> f_per_method;  // [method][iteration-1]
  std::string csv_path;
};

// Runs every config (same data, model, lambda, seed, iteration budget;
// ConfigError otherwise) from identical initialization and data order and
// writes per-iteration F values, one column per method.
CompareResult compare_convergence(const std::vector<ExperimentConfig>& cfgs,
                                  const std::string& out_csv);

// Class-0 softmax probability on a resolution x resolution grid over
// [lo, hi]^2, written as CSV rows x,y,p0. The network must take 2-dimensional
// inputs and emit 2 logits.
void export_decision_boundary(const NetworkSpec& spec, const WeightStore& store, double lo,
                              double hi, std::size_t resolution, const std::string& out_csv);

struct LipschitzSummary {
  double mean = 0.0;
  double median = 0.0;
  std::size_t samples = 0;
};

// Per-sample Jacobian spectral norms over the first `max_samples` examples,
// one CSV row each plus mean/median summary rows.
LipschitzSummary export_lipschitz_histogram(const NetworkSpec& spec, const WeightStore& store,
                                            const Dataset& samples, std::size_t max_samples,
                                            const std::string& out_csv);

// Entry point behind the command-line binary. Subcommands: train, prune,
// compare, boundary, lipschitz. Returns 0 on success, 1 on configuration or
// usage errors, 2 on training divergence.
int run_cli(int argc, const char* const* argv);

}  // namespace pathprox
