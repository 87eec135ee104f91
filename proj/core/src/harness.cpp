#include "pathprox/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pathprox/errors.hpp"

namespace pathprox {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ConfigError(std::string("config: unknown key \"") + item.key() + "\" in " + where);
    }
  }
}

// Copies one example out of the dataset, shaped like a single input.
Tensor example_tensor(const Dataset& ds, std::size_t index) {
  if (index >= ds.size()) {
    throw IndexError("example_tensor: index " + std::to_string(index) + " out of range");
  }
  std::vector<std::size_t> shape(ds.features.shape().begin() + 1, ds.features.shape().end());
  const std::size_t block = ds.features.size() / ds.size();
  Tensor out(shape);
  const double* src = ds.features.data() + index * block;
  std::copy(src, src + block, out.data());
  return out;
}

}  // namespace

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kSgdWeightDecay: return "sgd_weight_decay";
    case Algorithm::kSgdPathNorm: return "sgd_path_norm";
    case Algorithm::kPathProx: return "pathprox";
    case Algorithm::kWeightNormSgd: return "weight_norm_sgd";
    case Algorithm::kLasso: return "lasso";
    case Algorithm::kGroupLasso: return "group_lasso";
  }
  return "unknown";
}

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "sgd_weight_decay") return Algorithm::kSgdWeightDecay;
  if (name == "sgd_path_norm") return Algorithm::kSgdPathNorm;
  if (name == "pathprox") return Algorithm::kPathProx;
  if (name == "weight_norm_sgd") return Algorithm::kWeightNormSgd;
  if (name == "lasso") return Algorithm::kLasso;
  if (name == "group_lasso") return Algorithm::kGroupLasso;
  throw ConfigError("config: unknown algorithm \"" + name + "\"");
}

namespace {

const char* schedule_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::kConstant: return "constant";
    case ScheduleKind::kStepDecay: return "step_decay";
    case ScheduleKind::kInvSqrt: return "inv_sqrt";
    case ScheduleKind::kInvT: return "inv_t";
  }
  return "unknown";
}

ScheduleKind schedule_from_name(const std::string& name) {
  if (name == "constant") return ScheduleKind::kConstant;
  if (name == "step_decay") return ScheduleKind::kStepDecay;
  if (name == "inv_sqrt") return ScheduleKind::kInvSqrt;
  if (name == "inv_t") return ScheduleKind::kInvT;
  throw ConfigError("config: unknown schedule kind \"" + name + "\"");
}

// Default decay points at 50% and 75% of the budget; short runs fall back to a
// constant step.
void resolve_default_schedule(StepSchedule& s, std::size_t iterations) {
  std::vector<std::size_t> ms;
  for (std::size_t m : {iterations / 2, 3 * iterations / 4}) {
    if (m >= 1 && m < iterations && (ms.empty() || m > ms.back())) ms.push_back(m);
  }
  if (ms.empty()) {
    s.kind = ScheduleKind::kConstant;
  } else {
    s.kind = ScheduleKind::kStepDecay;
    s.factor = 0.1;
    s.interval = 0;
    s.milestones = std::move(ms);
  }
}

}  // namespace

void TaskConfig::validate() const {
  if (dataset != "synthetic" && dataset != "idx") {
    throw ConfigError("config: task.dataset must be \"synthetic\" or \"idx\", got \"" + dataset +
                      "\"");
  }
  if (model != "mlp" && model != "toy_cnn") {
    throw ConfigError("config: task.model must be \"mlp\" or \"toy_cnn\", got \"" + model + "\"");
  }
  if (dataset == "synthetic") {
    if (synthetic_n < 2) throw ConfigError("config: task.synthetic.n must be at least 2");
    if (model == "toy_cnn") {
      throw ConfigError("config: toy_cnn needs image data; use an idx dataset");
    }
  } else {
    if (idx_images.empty() || idx_labels.empty()) {
      throw ConfigError("config: task.idx.images and task.idx.labels are required");
    }
    if (idx_test_images.empty() != idx_test_labels.empty()) {
      throw ConfigError("config: task.idx test images and labels must be given together");
    }
  }
  if (model == "mlp") {
    if (mlp_depth < 2) throw ConfigError("config: task.mlp.depth must be at least 2");
    if (mlp_width == 0) throw ConfigError("config: task.mlp.width must be positive");
  } else {
    if (cnn.channels.size() < 2) {
      throw ConfigError("config: task.cnn.channels needs the input channel count plus at least "
                        "one conv layer");
    }
    if (cnn.channels[0] != 1) {
      throw ConfigError("config: task.cnn.channels must start with 1 (single-channel images)");
    }
  }
}

void ExperimentConfig::validate() const {
  task.validate();
  if (iterations < 1) throw ConfigError("config: iterations must be at least 1");
  if (eval_interval < 1) throw ConfigError("config: eval_interval must be at least 1");
  optimizer.schedule.validate();
  if (optimizer.lambda < 0.0) throw ConfigError("config: lambda must be nonnegative");
  if (sparsity_threshold < 0.0) {
    throw ConfigError("config: sparsity_threshold must be nonnegative");
  }
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
  for (std::size_t i = 0; i < checkpoint_schedule.size(); ++i) {
    if (checkpoint_schedule[i] < 1 || checkpoint_schedule[i] > iterations) {
      throw ConfigError("config: checkpoint_schedule entries must lie in [1, iterations]");
    }
    if (i > 0 && checkpoint_schedule[i] <= checkpoint_schedule[i - 1]) {
      throw ConfigError("config: checkpoint_schedule must be strictly increasing");
    }
  }
  if (!resume_from.empty() && !fs::exists(resume_from)) {
    throw ConfigError("config: resume_from checkpoint \"" + resume_from + "\" does not exist");
  }
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config: ") + e.what(), static_cast<long long>(e.byte));
  }

  ExperimentConfig cfg;
  bool schedule_given = false;
  try {
    check_keys(j,
               {"task", "optimizer", "iterations", "eval_interval", "batch_size",
                "sparsity_threshold", "checkpoint_schedule", "retrain_iterations", "output_dir",
                "seed", "record_timing", "resume_from"},
               "the top level");

    if (j.contains("task")) {
      const json& t = j["task"];
      check_keys(t,
                 {"dataset", "synthetic", "idx", "subsample_per_class", "val_size", "normalize",
                  "model", "mlp", "cnn", "include_bias_in_unit"},
                 "task");
      cfg.task.dataset = t.value("dataset", cfg.task.dataset);
      if (t.contains("synthetic")) {
        const json& s = t["synthetic"];
        check_keys(s, {"n", "noise", "outliers"}, "task.synthetic");
        cfg.task.synthetic_n = s.value("n", cfg.task.synthetic_n);
        cfg.task.synthetic_noise = s.value("noise", cfg.task.synthetic_noise);
        cfg.task.synthetic_outliers = s.value("outliers", cfg.task.synthetic_outliers);
      }
      if (t.contains("idx")) {
        const json& d = t["idx"];
        check_keys(d, {"images", "labels", "test_images", "test_labels"}, "task.idx");
        cfg.task.idx_images = d.value("images", "");
        cfg.task.idx_labels = d.value("labels", "");
        cfg.task.idx_test_images = d.value("test_images", "");
        cfg.task.idx_test_labels = d.value("test_labels", "");
      }
      cfg.task.subsample_per_class = t.value("subsample_per_class", cfg.task.subsample_per_class);
      cfg.task.val_size = t.value("val_size", cfg.task.val_size);
      cfg.task.normalize = t.value("normalize", cfg.task.normalize);
      cfg.task.model = t.value("model", cfg.task.model);
      if (t.contains("mlp")) {
        const json& m = t["mlp"];
        check_keys(m, {"depth", "width", "factorized"}, "task.mlp");
        cfg.task.mlp_depth = m.value("depth", cfg.task.mlp_depth);
        cfg.task.mlp_width = m.value("width", cfg.task.mlp_width);
        cfg.task.factorized = m.value("factorized", cfg.task.factorized);
      }
      if (t.contains("cnn")) {
        const json& c = t["cnn"];
        check_keys(c, {"channels", "kernel", "pool_after", "pool", "padding", "grouped"},
                   "task.cnn");
        cfg.task.cnn.channels = c.value("channels", std::vector<std::size_t>{});
        cfg.task.cnn.kernel = c.value("kernel", cfg.task.cnn.kernel);
        cfg.task.cnn.pool_after = c.value("pool_after", std::vector<std::size_t>{});
        const std::string pool = c.value("pool", "max");
        if (pool != "max" && pool != "avg") {
          throw ConfigError("config: task.cnn.pool must be \"max\" or \"avg\"");
        }
        cfg.task.cnn.pool_kind = pool == "max" ? PoolKind::kMax : PoolKind::kAvg;
        const std::string pad = c.value("padding", "same");
        if (pad != "same" && pad != "valid") {
          throw ConfigError("config: task.cnn.padding must be \"same\" or \"valid\"");
        }
        cfg.task.cnn.padding = pad == "same" ? Padding::kSame : Padding::kValid;
        cfg.task.cnn.grouped = c.value("grouped", cfg.task.cnn.grouped);
      }
      cfg.task.include_bias_in_unit =
          t.value("include_bias_in_unit", cfg.task.include_bias_in_unit);
    }

    if (j.contains("optimizer")) {
      const json& o = j["optimizer"];
      check_keys(o, {"algorithm", "lambda", "lr", "schedule", "balance_layerwise"}, "optimizer");
      cfg.optimizer.algorithm =
          algorithm_from_name(o.value("algorithm", std::string(algorithm_name(
                                                       cfg.optimizer.algorithm))));
      cfg.optimizer.lambda = o.value("lambda", cfg.optimizer.lambda);
      cfg.optimizer.schedule.base = o.value("lr", cfg.optimizer.schedule.base);
      cfg.optimizer.balance_layerwise =
          o.value("balance_layerwise", cfg.optimizer.balance_layerwise);
      if (o.contains("schedule")) {
        schedule_given = true;
        const json& s = o["schedule"];
        check_keys(s, {"kind", "factor", "interval", "milestones"}, "optimizer.schedule");
        cfg.optimizer.schedule.kind = schedule_from_name(s.value("kind", "step_decay"));
        cfg.optimizer.schedule.factor = s.value("factor", cfg.optimizer.schedule.factor);
        cfg.optimizer.schedule.interval = s.value("interval", cfg.optimizer.schedule.interval);
        cfg.optimizer.schedule.milestones =
            s.value("milestones", std::vector<std::size_t>{});
      }
    }

    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.eval_interval = j.value("eval_interval", cfg.eval_interval);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.sparsity_threshold = j.value("sparsity_threshold", cfg.sparsity_threshold);
    cfg.checkpoint_schedule = j.value("checkpoint_schedule", std::vector<std::size_t>{});
    cfg.retrain_iterations = j.value("retrain_iterations", cfg.retrain_iterations);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.record_timing = j.value("record_timing", cfg.record_timing);
    cfg.resume_from = j.value("resume_from", cfg.resume_from);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  const bool needs_default =
      !schedule_given || (cfg.optimizer.schedule.kind == ScheduleKind::kStepDecay &&
                          cfg.optimizer.schedule.interval == 0 &&
                          cfg.optimizer.schedule.milestones.empty());
  if (needs_default) resolve_default_schedule(cfg.optimizer.schedule, cfg.iterations);

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  json task;
  task["dataset"] = cfg.task.dataset;
  task["synthetic"] = {{"n", cfg.task.synthetic_n},
                       {"noise", cfg.task.synthetic_noise},
                       {"outliers", cfg.task.synthetic_outliers}};
  task["idx"] = {{"images", cfg.task.idx_images},
                 {"labels", cfg.task.idx_labels},
                 {"test_images", cfg.task.idx_test_images},
                 {"test_labels", cfg.task.idx_test_labels}};
  task["subsample_per_class"] = cfg.task.subsample_per_class;
  task["val_size"] = cfg.task.val_size;
  task["normalize"] = cfg.task.normalize;
  task["model"] = cfg.task.model;
  task["mlp"] = {{"depth", cfg.task.mlp_depth},
                 {"width", cfg.task.mlp_width},
                 {"factorized", cfg.task.factorized}};
  task["cnn"] = {{"channels", cfg.task.cnn.channels},
                 {"kernel", cfg.task.cnn.kernel},
                 {"pool_after", cfg.task.cnn.pool_after},
                 {"pool", cfg.task.cnn.pool_kind == PoolKind::kMax ? "max" : "avg"},
                 {"padding", cfg.task.cnn.padding == Padding::kSame ? "same" : "valid"},
                 {"grouped", cfg.task.cnn.grouped}};
  task["include_bias_in_unit"] = cfg.task.include_bias_in_unit;
  j["task"] = std::move(task);

  json opt;
  opt["algorithm"] = algorithm_name(cfg.optimizer.algorithm);
  opt["lambda"] = cfg.optimizer.lambda;
  opt["lr"] = cfg.optimizer.schedule.base;
  opt["schedule"] = {{"kind", schedule_name(cfg.optimizer.schedule.kind)},
                     {"factor", cfg.optimizer.schedule.factor},
                     {"interval", cfg.optimizer.schedule.interval},
                     {"milestones", cfg.optimizer.schedule.milestones}};
  opt["balance_layerwise"] = cfg.optimizer.balance_layerwise;
  j["optimizer"] = std::move(opt);

  j["iterations"] = cfg.iterations;
  j["eval_interval"] = cfg.eval_interval;
  j["batch_size"] = cfg.batch_size;
  j["sparsity_threshold"] = cfg.sparsity_threshold;
  j["checkpoint_schedule"] = cfg.checkpoint_schedule;
  j["retrain_iterations"] = cfg.retrain_iterations;
  j["output_dir"] = cfg.output_dir;
  j["seed"] = cfg.seed;
  j["record_timing"] = cfg.record_timing;
  j["resume_from"] = cfg.resume_from;
  return j.dump(2) + "\n";
}

LoadedTask load_task(const TaskConfig& task, std::uint64_t seed) {
  task.validate();
  LoadedTask out;

  Dataset full;
  Dataset test;
  std::size_t image_h = 0, image_w = 0;
  if (task.dataset == "synthetic") {
    full = synthetic_two_class(task.synthetic_n, task.synthetic_noise, task.synthetic_outliers,
                               seed);
  } else {
    full = load_idx(task.idx_images, task.idx_labels);
    image_h = full.features.dim(1);
    image_w = full.features.dim(2);
    if (task.subsample_per_class > 0) {
      full = subsample_per_class(full, task.subsample_per_class, seed);
    }
    if (!task.idx_test_images.empty()) {
      test = load_idx(task.idx_test_images, task.idx_test_labels);
      if (test.features.dim(1) != image_h || test.features.dim(2) != image_w) {
        throw ConfigError("config: test images are " + test.features.shape_str() +
                          " but training images are " + full.features.shape_str());
      }
    }
  }

  if (task.val_size > 0) {
    SplitResult split = train_val_split(full, task.val_size, seed);
    out.train = std::move(split.train);
    out.val = std::move(split.val);
  } else {
    out.train = std::move(full);
  }
  out.test = std::move(test);
  if (out.test.size() > 0) out.test.num_classes = out.train.num_classes;

  if (task.dataset == "idx" && task.normalize) {
    const Normalization norm = compute_normalization(out.train);
    apply_normalization(out.train, norm);
    if (out.val.size() > 0) apply_normalization(out.val, norm);
    if (out.test.size() > 0) apply_normalization(out.test, norm);
  }

  const std::size_t classes = static_cast<std::size_t>(out.train.num_classes);
  const std::size_t per_row = out.train.features.size() / out.train.size();
  if (task.model == "mlp") {
    out.spec = build_mlp(task.mlp_depth, task.mlp_width, per_row, classes, task.factorized);
    const std::vector<std::size_t> flat{per_row};
    out.train = with_input_shape(out.train, flat);
    if (out.val.size() > 0) out.val = with_input_shape(out.val, flat);
    if (out.test.size() > 0) out.test = with_input_shape(out.test, flat);
  } else {
    ToyCnnOptions options = task.cnn;
    options.input_h = image_h;
    options.input_w = image_w;
    options.output_dim = classes;
    out.spec = build_toy_cnn(options);
    const std::vector<std::size_t> chw{1, image_h, image_w};
    out.train = with_input_shape(out.train, chw);
    if (out.val.size() > 0) out.val = with_input_shape(out.val, chw);
    if (out.test.size() > 0) out.test = with_input_shape(out.test, chw);
  }
  out.scheme = derive_grouping(out.spec, task.include_bias_in_unit);
  return out;
}

namespace {

void write_metrics_header(std::ostream& out, std::size_t groups) {
  out << "iteration,gamma,data_loss,F,G,R,Rtilde,active_pct";
  for (std::size_t i = 1; i <= groups; ++i) out << ",T_" << i;
  out << ",train_acc,val_acc,test_acc,ms\n";
}

void write_metrics_row(std::ostream& out, const MetricsRecord& rec) {
  out << rec.iteration << ',' << fmt_g17(rec.gamma) << ',' << fmt_g17(rec.data_loss) << ','
      << fmt_g17(rec.f) << ',' << fmt_g17(rec.g) << ',' << fmt_g17(rec.r) << ','
      << fmt_g17(rec.r_tilde) << ',' << fmt_g17(rec.active_pct);
  for (double t : rec.group_totals) out << ',' << fmt_g17(t);
  out << ',' << fmt_g17(rec.train_accuracy) << ',';
  if (rec.val_accuracy) out << fmt_g17(*rec.val_accuracy);
  out << ',';
  if (rec.test_accuracy) out << fmt_g17(*rec.test_accuracy);
  out << ',' << rec.ms << '\n';
}

MetricsRecord measure(const ExperimentConfig& cfg, const LoadedTask& task,
                      const WeightStore& store, std::size_t iteration, double gamma,
                      std::int64_t ms) {
  MetricsRecord rec;
  rec.iteration = iteration;
  rec.gamma = gamma;
  const ObjectiveBreakdown ob = objectives(task.spec, store, task.scheme, task.train.features,
                                           task.train.labels, cfg.optimizer.lambda);
  rec.data_loss = ob.data_loss;
  rec.f = ob.f_lambda;
  rec.g = ob.g_lambda;
  rec.r = ob.sum_squares;
  rec.r_tilde = ob.path_norm;
  rec.group_totals = ob.group_totals;
  rec.active_pct = 100.0 * structural_sparsity(store, task.scheme, cfg.sparsity_threshold);
  rec.train_accuracy =
      evaluate(task.spec, store, task.train.features, task.train.labels).accuracy;
  if (task.val.size() > 0) {
    rec.val_accuracy = evaluate(task.spec, store, task.val.features, task.val.labels).accuracy;
  }
  if (task.test.size() > 0) {
    rec.test_accuracy =
        evaluate(task.spec, store, task.test.features, task.test.labels).accuracy;
  }
  rec.ms = ms;
  return rec;
}

using AfterStepHook = std::function<void(std::size_t, WeightStore&, Optimizer&)>;

TrainingArtifacts run_training_impl(const ExperimentConfig& cfg, const AfterStepHook& after_step) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);

  TrainingArtifacts art;
  art.task = load_task(cfg.task, cfg.seed);
  const NetworkSpec& spec = art.task.spec;

  WeightStore store(spec);
  Optimizer opt(spec, art.task.scheme, cfg.optimizer);
  std::size_t start_iteration = 0;
  if (!cfg.resume_from.empty()) {
    Checkpoint cp = load_checkpoint(cfg.resume_from, spec);
    store = std::move(cp.store);
    if (cp.training) {
      start_iteration = cp.training->iteration;
      opt.set_frozen(cp.training->frozen);
    }
  } else {
    init_weights(store, spec, cfg.seed);
    opt.attach(store);
  }
  if (start_iteration >= cfg.iterations) {
    throw ConfigError("config: resume checkpoint is already at iteration " +
                      std::to_string(start_iteration) + " of " +
                      std::to_string(cfg.iterations));
  }

  {
    std::ofstream echo(fs::path(cfg.output_dir) / "config.json", std::ios::binary);
    echo << config_to_json(cfg);
  }

  BatchIterator batches(art.task.train, cfg.batch_size, cfg.seed);
  art.metrics_path = (fs::path(cfg.output_dir) / "metrics.csv").string();
  std::ofstream csv(art.metrics_path, std::ios::binary);
  if (!csv) throw ConfigError("config: cannot write metrics to \"" + art.metrics_path + "\"");
  write_metrics_header(csv, art.task.scheme.groups.size());
  csv.flush();

  const bool have_val = art.task.val.size() > 0;
  double best_val = -1.0;
  WeightStore best_store;
  FrozenMask best_frozen;
  auto segment_start = std::chrono::steady_clock::now();

  for (std::size_t t = start_iteration + 1; t <= cfg.iterations; ++t) {
    const Batch batch = batches.batch_for(t);
    const double gamma = cfg.optimizer.schedule.gamma(t);
    opt.step(store, batch.features, batch.labels, t);
    if (after_step) after_step(t, store, opt);

    if (t % cfg.eval_interval == 0 || t == cfg.iterations) {
      std::int64_t ms = 0;
      if (cfg.record_timing) {
        const auto now = std::chrono::steady_clock::now();
        ms = std::chrono::duration_cast<std::chrono::milliseconds>(now - segment_start).count();
        segment_start = now;
      }
      const MetricsRecord rec = measure(cfg, art.task, store, t, gamma, ms);
      write_metrics_row(csv, rec);
      csv.flush();
      art.metrics.push_back(rec);
      if (have_val && rec.val_accuracy && *rec.val_accuracy > best_val) {
        best_val = *rec.val_accuracy;
        best_store = store;
        best_frozen = opt.frozen();
        art.best_iteration = t;
      }
      if (cfg.record_timing) segment_start = std::chrono::steady_clock::now();
    }
  }

  const TrainingState final_state{cfg.iterations, opt.frozen()};
  art.final_checkpoint_path = (fs::path(cfg.output_dir) / "final.json").string();
  save_checkpoint(art.final_checkpoint_path, spec, store, cfg.seed, &final_state);
  if (have_val && art.best_iteration > 0) {
    const TrainingState best_state{art.best_iteration, best_frozen};
    art.best_checkpoint_path = (fs::path(cfg.output_dir) / "best.json").string();
    save_checkpoint(art.best_checkpoint_path, spec, best_store, cfg.seed, &best_state);
    art.best_store = std::move(best_store);
  } else {
    art.best_store = store;
    art.best_iteration = cfg.iterations;
  }
  art.store = std::move(store);
  return art;
}

}  // namespace

TrainingArtifacts run_training(const ExperimentConfig& cfg) {
  return run_training_impl(cfg, nullptr);
}

PruneResult prune_retrain(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.checkpoint_schedule.empty()) {
    throw ConfigError("prune: checkpoint_schedule must not be empty");
  }
  if (cfg.retrain_iterations == 0) {
    throw ConfigError("prune: retrain_iterations must be at least 1");
  }

  struct Snapshot {
    std::size_t iteration;
    WeightStore store;
    FrozenMask frozen;
  };
  std::vector<Snapshot> snapshots;
  const std::vector<std::size_t>& schedule = cfg.checkpoint_schedule;

  PruneResult result;
  result.main_run = run_training_impl(cfg, [&](std::size_t t, WeightStore& store, Optimizer& opt) {
    opt.freeze_newly_zeroed(store);
    if (std::find(schedule.begin(), schedule.end(), t) != schedule.end()) {
      snapshots.push_back({t, store, opt.frozen()});
    }
  });

  const LoadedTask& task = result.main_run.task;
  if (task.scheme.groups.empty()) {
    throw ConfigError("prune: the configured model has no grouped units to prune");
  }
  const Dataset& eval_set = task.test.size() > 0 ? task.test
                            : task.val.size() > 0 ? task.val
                                                  : task.train;
  const double total_units = static_cast<double>(task.scheme.total_units());

  for (const Snapshot& snap : snapshots) {
    WeightStore store = snap.store;
    Optimizer opt(task.spec, task.scheme, cfg.optimizer);
    opt.set_frozen(snap.frozen);

    PruneRow row;
    row.checkpoint_iteration = snap.iteration;
    for (std::size_t g = 0; g < task.scheme.groups.size(); ++g) {
      for (std::size_t u = 0; u < task.scheme.groups[g].unit_count; ++u) {
        if (opt.frozen()[g][u]) continue;
        const double product =
            unit_lipschitz_bound(HomogeneousUnitView(task.scheme, g, u), store);
        if (product < cfg.sparsity_threshold) {
          row.deactivated.emplace_back(g, u);
          row.products_at_deactivation.push_back(product);
          opt.freeze_unit(store, g, u);
        }
      }
    }
    row.sparsity = static_cast<double>(opt.frozen_count()) / total_units;
    row.frozen_at_deactivation = opt.frozen();

    BatchIterator batches(task.train, cfg.batch_size, cfg.seed);
    for (std::size_t t = snap.iteration + 1; t <= snap.iteration + cfg.retrain_iterations; ++t) {
      const Batch batch = batches.batch_for(t);
      opt.step(store, batch.features, batch.labels, t);
      opt.freeze_newly_zeroed(store);
    }

    row.test_accuracy = evaluate(task.spec, store, eval_set.features, eval_set.labels).accuracy;
    row.store_after_retrain = std::move(store);
    row.frozen_after_retrain = opt.frozen();
    result.rows.push_back(std::move(row));
  }

  result.table_path = (fs::path(cfg.output_dir) / "prune_table.csv").string();
  std::ofstream table(result.table_path, std::ios::binary);
  if (!table) throw ConfigError("prune: cannot write \"" + result.table_path + "\"");
  table << "checkpoint_iter,sparsity,test_acc\n";
  for (const PruneRow& row : result.rows) {
    table << row.checkpoint_iteration << ',' << fmt_g17(row.sparsity) << ','
          << fmt_g17(row.test_accuracy) << '\n';
  }
  return result;
}

CompareResult compare_convergence(const std::vector<ExperimentConfig>& cfgs,
                                  const std::string& out_csv) {
  if (cfgs.empty()) throw ConfigError("compare: need at least one configuration");
  for (const ExperimentConfig& c : cfgs) c.validate();

  auto fingerprint = [](const ExperimentConfig& c) {
    ExperimentConfig probe = c;
    probe.optimizer = OptimizerConfig{};
    probe.optimizer.lambda = c.optimizer.lambda;
    probe.output_dir = "-";
    probe.record_timing = false;
    return config_to_json(probe);
  };
  const std::string base = fingerprint(cfgs.front());
  for (const ExperimentConfig& c : cfgs) {
    if (fingerprint(c) != base) {
      throw ConfigError(
          "compare: all runs must share the task, lambda, seed, batching, and iteration budget");
    }
  }

  CompareResult result;
  result.csv_path = out_csv;
  const std::size_t T = cfgs.front().iterations;
  for (const ExperimentConfig& cfg : cfgs) {
    LoadedTask task = load_task(cfg.task, cfg.seed);
    WeightStore store(task.spec);
    init_weights(store, task.spec, cfg.seed);
    Optimizer opt(task.spec, task.scheme, cfg.optimizer);
    opt.attach(store);
    BatchIterator batches(task.train, cfg.batch_size, cfg.seed);

    std::vector<double> column;
    column.reserve(T);
    for (std::size_t t = 1; t <= T; ++t) {
      const Batch batch = batches.batch_for(t);
      opt.step(store, batch.features, batch.labels, t);
      column.push_back(objectives(task.spec, store, task.scheme, task.train.features,
                                  task.train.labels, cfg.optimizer.lambda)
                           .f_lambda);
    }
    result.names.emplace_back(algorithm_name(cfg.optimizer.algorithm));
    result.f_per_method.push_back(std::move(column));
  }

  fs::create_directories(fs::path(out_csv).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(out_csv).parent_path());
  std::ofstream csv(out_csv, std::ios::binary);
  if (!csv) throw ConfigError("compare: cannot write \"" + out_csv + "\"");
  csv << "iteration";
  for (const std::string& n : result.names) csv << ',' << n;
  csv << '\n';
  for (std::size_t t = 0; t < T; ++t) {
    csv << (t + 1);
    for (const auto& col : result.f_per_method) csv << ',' << fmt_g17(col[t]);
    csv << '\n';
  }
  return result;
}

void export_decision_boundary(const NetworkSpec& spec, const WeightStore& store, double lo,
                              double hi, std::size_t resolution, const std::string& out_csv) {
  if (spec.input_shape != std::vector<std::size_t>{2} || spec.output_dim != 2) {
    throw ContractError("decision boundary export needs a 2-input, 2-class network");
  }
  if (resolution < 2) throw ConfigError("boundary: resolution must be at least 2");
  if (!(hi > lo)) throw ConfigError("boundary: bounds must satisfy lo < hi");

  Tensor grid({resolution * resolution, 2});
  for (std::size_t iy = 0; iy < resolution; ++iy) {
    const double y = lo + (hi - lo) * static_cast<double>(iy) / static_cast<double>(resolution - 1);
    for (std::size_t ix = 0; ix < resolution; ++ix) {
      const double x =
          lo + (hi - lo) * static_cast<double>(ix) / static_cast<double>(resolution - 1);
      const std::size_t row = iy * resolution + ix;
      grid(row, 0) = x;
      grid(row, 1) = y;
    }
  }
  const Tensor logits = forward(spec, store, grid);

  std::ofstream csv(out_csv, std::ios::binary);
  if (!csv) throw ConfigError("boundary: cannot write \"" + out_csv + "\"");
  csv << "x,y,p0\n";
  for (std::size_t r = 0; r < resolution * resolution; ++r) {
    const double z = logits(r, 0) - logits(r, 1);
    const double p0 = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    csv << fmt_g17(grid(r, 0)) << ',' << fmt_g17(grid(r, 1)) << ',' << fmt_g17(p0) << '\n';
  }
}

LipschitzSummary export_lipschitz_histogram(const NetworkSpec& spec, const WeightStore& store,
                                            const Dataset& samples, std::size_t max_samples,
                                            const std::string& out_csv) {
  const std::size_t n = std::min(samples.size(), max_samples);
  if (n == 0) throw ConfigError("lipschitz: no samples to evaluate");

  std::ofstream csv(out_csv, std::ios::binary);
  if (!csv) throw ConfigError("lipschitz: cannot write \"" + out_csv + "\"");
  csv << "sample,sigma_max\n";
  std::vector<double> values;
  values.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor x = example_tensor(samples, i);
    values.push_back(jacobian_spectral_norm(spec, store, x, i).value);
    csv << i << ',' << fmt_g17(values.back()) << '\n';
  }

  LipschitzSummary summary;
  summary.samples = n;
  summary.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  summary.median =
      n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  csv << "mean," << fmt_g17(summary.mean) << '\n';
  csv << "median," << fmt_g17(summary.median) << '\n';
  return summary;
}

namespace {

// Applies CLI overrides onto the raw JSON document so schedule defaults are
// resolved once, after every override is in place.
struct CliOverrides {
  std::optional<double> lambda, lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iters;
  std::optional<std::string> out;
};

ExperimentConfig config_with_overrides(const std::string& config_path, const CliOverrides& ov) {
  std::ifstream in(config_path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open \"" + config_path + "\"");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config: ") + e.what(), static_cast<long long>(e.byte));
  }
  if (!j.is_object()) throw ConfigError("config: the document root must be an object");
  if (ov.lambda) j["optimizer"]["lambda"] = *ov.lambda;
  if (ov.lr) j["optimizer"]["lr"] = *ov.lr;
  if (ov.seed) j["seed"] = *ov.seed;
  if (ov.iters) j["iterations"] = *ov.iters;
  if (ov.out) j["output_dir"] = *ov.out;
  return parse_config(j.dump());
}

void print_effective_header(const ExperimentConfig& cfg) {
  std::printf("# algorithm=%s lambda=%g lr=%g iterations=%zu seed=%llu output_dir=%s\n",
              algorithm_name(cfg.optimizer.algorithm), cfg.optimizer.lambda,
              cfg.optimizer.schedule.base, cfg.iterations,
              static_cast<unsigned long long>(cfg.seed), cfg.output_dir.c_str());
}

WeightStore store_for_export(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                             const LoadedTask& task) {
  if (!checkpoint_path.empty()) {
    return load_checkpoint(checkpoint_path, task.spec).store;
  }
  TrainingArtifacts art = run_training(cfg);
  return art.best_store;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Path-norm regularized training for ReLU networks"};
  app.require_subcommand(1);

  std::string config_path;
  CliOverrides ov;
  std::string checkpoint_path;
  std::string methods = "pathprox,sgd_path_norm,sgd_weight_decay";
  std::size_t resolution = 65;
  double grid_lo = -3.0, grid_hi = 3.0;
  std::size_t lipschitz_samples = 1000;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment configuration JSON")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--lambda", ov.lambda, "override the regularization strength");
    sub->add_option("--lr", ov.lr, "override the base step size");
    sub->add_option("--seed", ov.seed, "override the seed");
    sub->add_option("--iters", ov.iters, "override the iteration budget");
    sub->add_option("--out", ov.out, "override the output directory");
  };

  CLI::App* train = app.add_subcommand("train", "run one training experiment");
  add_common(train);
  CLI::App* prune = app.add_subcommand("prune", "train, prune by unit path norm, retrain");
  add_common(prune);
  CLI::App* compare =
      app.add_subcommand("compare", "run several optimizers from identical starts");
  add_common(compare);
  compare->add_option("--methods", methods, "comma-separated optimizer list");
  CLI::App* boundary = app.add_subcommand("boundary", "export a 2D decision-boundary grid");
  add_common(boundary);
  boundary->add_option("--checkpoint", checkpoint_path, "evaluate this checkpoint, skip training")
      ->check(CLI::ExistingFile);
  boundary->add_option("--resolution", resolution, "grid points per axis");
  boundary->add_option("--lo", grid_lo, "grid lower bound (both axes)");
  boundary->add_option("--hi", grid_hi, "grid upper bound (both axes)");
  CLI::App* lipschitz =
      app.add_subcommand("lipschitz", "export per-sample Jacobian spectral norms");
  add_common(lipschitz);
  lipschitz->add_option("--checkpoint", checkpoint_path, "evaluate this checkpoint, skip training")
      ->check(CLI::ExistingFile);
  lipschitz->add_option("--samples", lipschitz_samples, "number of samples to evaluate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const ExperimentConfig cfg = config_with_overrides(config_path, ov);
    print_effective_header(cfg);

    if (train->parsed()) {
      TrainingArtifacts art = run_training(cfg);
      const MetricsRecord& last = art.metrics.back();
      std::printf("final: iteration=%zu data_loss=%.6g F=%.6g G=%.6g active_pct=%.2f\n",
                  last.iteration, last.data_loss, last.f, last.g, last.active_pct);
      if (art.best_iteration != cfg.iterations || !art.best_checkpoint_path.empty()) {
        std::printf("best validation at iteration %zu\n", art.best_iteration);
      }
      std::printf("metrics: %s\n", art.metrics_path.c_str());
    } else if (prune->parsed()) {
      PruneResult pr = prune_retrain(cfg);
      std::printf("checkpoint_iter sparsity test_acc\n");
      for (const PruneRow& row : pr.rows) {
        std::printf("%15zu %8.4f %8.4f\n", row.checkpoint_iteration, row.sparsity,
                    row.test_accuracy);
      }
      std::printf("table: %s\n", pr.table_path.c_str());
    } else if (compare->parsed()) {
      std::vector<ExperimentConfig> cfgs;
      std::stringstream ss(methods);
      std::string name;
      while (std::getline(ss, name, ',')) {
        if (name.empty()) continue;
        ExperimentConfig c = cfg;
        c.optimizer.algorithm = algorithm_from_name(name);
        cfgs.push_back(std::move(c));
      }
      if (cfgs.empty()) throw ConfigError("compare: --methods named no optimizers");
      fs::create_directories(cfg.output_dir);
      const std::string out_csv = (fs::path(cfg.output_dir) / "compare.csv").string();
      CompareResult cr = compare_convergence(cfgs, out_csv);
      for (std::size_t m = 0; m < cr.names.size(); ++m) {
        std::printf("%s: final F=%.6g\n", cr.names[m].c_str(), cr.f_per_method[m].back());
      }
      std::printf("table: %s\n", cr.csv_path.c_str());
    } else if (boundary->parsed()) {
      LoadedTask task = load_task(cfg.task, cfg.seed);
      WeightStore store = store_for_export(cfg, checkpoint_path, task);
      fs::create_directories(cfg.output_dir);
      const std::string out_csv = (fs::path(cfg.output_dir) / "boundary.csv").string();
      export_decision_boundary(task.spec, store, grid_lo, grid_hi, resolution, out_csv);
      std::printf("grid: %s\n", out_csv.c_str());
    } else if (lipschitz->parsed()) {
      LoadedTask task = load_task(cfg.task, cfg.seed);
      WeightStore store = store_for_export(cfg, checkpoint_path, task);
      const Dataset& samples = task.test.size() > 0 ? task.test
                               : task.val.size() > 0 ? task.val
                                                     : task.train;
      fs::create_directories(cfg.output_dir);
      const std::string out_csv = (fs::path(cfg.output_dir) / "lipschitz.csv").string();
      const LipschitzSummary summary =
          export_lipschitz_histogram(task.spec, store, samples, lipschitz_samples, out_csv);
      std::printf("samples=%zu mean=%.6g median=%.6g\n", summary.samples, summary.mean,
                  summary.median);
      std::printf("histogram: %s\n", out_csv.c_str());
    }
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace pathprox
