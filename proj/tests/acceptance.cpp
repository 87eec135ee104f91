// Acceptance gate for the library: ten end-to-end checks, one line of output
// each ("ACCEPTANCE <n> PASS|FAIL <name> <details>"). The process exit code is
// the number of failed checks, so `ctest` treats any red line as a failure.
//
// Tolerances are pinned here, next to the check that uses them, and are part
// of the contract: loosening one is a library regression, not a test fix.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pathprox/checkpoint.hpp"
#include "pathprox/data.hpp"
#include "pathprox/errors.hpp"
#include "pathprox/grouping.hpp"
#include "pathprox/harness.hpp"
#include "pathprox/network.hpp"
#include "pathprox/optimizers.hpp"
#include "pathprox/random.hpp"
#include "pathprox/regularization.hpp"
#include "pathprox/tape.hpp"
#include "pathprox/tensor.hpp"

namespace fs = std::filesystem;
using namespace pathprox;

namespace {

int g_failures = 0;

fs::path scratch_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "pathprox_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path scratch(const std::string& name) {
  fs::path p = scratch_root() / name;
  fs::create_directories(p);
  return p;
}

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return std::string(buf);
}

// Runs one check, times it, prints the verdict line, and tallies failures.
// `fn` returns {ok, details}; a thrown exception is a failure.
void criterion(int id, const char* name,
               const std::function<std::pair<bool, std::string>()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = false;
  std::string details;
  try {
    auto r = fn();
    ok = r.first;
    details = std::move(r.second);
  } catch (const std::exception& e) {
    ok = false;
    details = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!ok) ++g_failures;
  std::printf("ACCEPTANCE %d %s %s %s [%.1fs]\n", id, ok ? "PASS" : "FAIL", name, details.c_str(),
              secs);
  std::fflush(stdout);
}

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng = make_rng(seed, 0xACC);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * dist(rng);
  return t;
}

double vec_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / denom;
}

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + n / 2 - 1, v.end());
  return 0.5 * (v[n / 2 - 1] + hi);
}

// Largest singular value of a dense matrix, via cyclic Jacobi sweeps on the
// Gram matrix. Independent of the power-iteration path inside the library.
double svd_sigma_max(const Tensor& w) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  const std::size_t n = cols;
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < rows; ++r) s += w(r, i) * w(r, j);
      a[i * n + j] = s;
    }
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-26) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = 0.5 * std::atan2(2.0 * apq, a[q * n + q] - a[p * n + p]);
        const double c = std::cos(theta), s = std::sin(theta);
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
    }
  }
  double lam = 0.0;
  for (std::size_t i = 0; i < n; ++i) lam = std::max(lam, a[i * n + i]);
  return std::sqrt(std::max(lam, 0.0));
}

bool stores_bitwise_equal(const WeightStore& a, const WeightStore& b) {
  if (a.layer_count() != b.layer_count()) return false;
  for (std::size_t l = 0; l < a.layer_count(); ++l) {
    const Tensor& wa = a.weights()[l];
    const Tensor& wb = b.weights()[l];
    if (wa.shape() != wb.shape()) return false;
    if (!std::equal(wa.data(), wa.data() + wa.size(), wb.data())) return false;
    const Tensor& ba = a.biases()[l];
    const Tensor& bb = b.biases()[l];
    if (ba.shape() != bb.shape()) return false;
    if (!std::equal(ba.data(), ba.data() + ba.size(), bb.data())) return false;
  }
  return true;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients against central finite differences.

std::pair<bool, std::string> check_gradients() {
  constexpr double kRelTol = 1e-4;    // per coordinate, against central differences
  constexpr double kGradFloor = 1e-8; // coordinates smaller than this are skipped
  constexpr double kFdStep = 1e-5;

  auto max_rel = [&](const NetworkSpec& spec, const Tensor& x, const std::vector<int>& labels,
                     std::uint64_t seed) {
    WeightStore store(spec);
    init_weights(store, spec, seed);
    // Nonzero biases so bias gradients are exercised away from the origin.
    std::mt19937_64 rng = make_rng(seed, 0xB1A5);
    std::normal_distribution<double> dist(0.0, 0.1);
    for (Tensor& b : store.mutable_biases())
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = dist(rng);

    const DataGradients analytic = data_gradients(spec, store, x, labels);

    std::vector<Tensor> params;
    std::vector<std::pair<bool, std::size_t>> slots;  // (is_bias, layer)
    for (std::size_t l = 0; l < store.layer_count(); ++l) {
      params.push_back(store.weights()[l]);
      slots.emplace_back(false, l);
      if (store.has_bias(l)) {
        params.push_back(store.biases()[l]);
        slots.emplace_back(true, l);
      }
    }
    auto loss_at = [&](const std::vector<Tensor>& p) {
      WeightStore s = store;
      for (std::size_t k = 0; k < p.size(); ++k) {
        Tensor& dst = slots[k].first ? s.mutable_biases()[slots[k].second]
                                     : s.mutable_weights()[slots[k].second];
        dst = p[k];
      }
      return evaluate(spec, s, x, labels).loss;
    };
    const std::vector<Tensor> fd = finite_difference_gradient(loss_at, params, kFdStep);

    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Tensor& an =
          slots[k].first ? analytic.biases[slots[k].second] : analytic.weights[slots[k].second];
      for (std::size_t i = 0; i < an.size(); ++i) {
        if (std::abs(an[i]) <= kGradFloor) continue;
        worst = std::max(worst, std::abs(an[i] - fd[k][i]) / std::abs(an[i]));
        ++checked;
      }
    }
    return std::make_pair(worst, checked);
  };

  const NetworkSpec mlp = build_mlp(2, 16, 10, 3);
  const Tensor x_mlp = random_tensor({5, 10}, 21);
  const auto [mlp_rel, mlp_n] = max_rel(mlp, x_mlp, {0, 1, 2, 0, 1}, 31);

  ToyCnnOptions opt;
  opt.channels = {1, 2, 2};
  opt.pool_after = {1};
  opt.input_h = 6;
  opt.input_w = 6;
  opt.output_dim = 2;
  const NetworkSpec cnn = build_toy_cnn(opt);
  const Tensor x_cnn = random_tensor({3, 1, 6, 6}, 22);
  const auto [cnn_rel, cnn_n] = max_rel(cnn, x_cnn, {0, 1, 0}, 32);

  const bool ok = mlp_rel <= kRelTol && cnn_rel <= kRelTol && mlp_n > 100 && cnn_n > 50;
  return {ok, fmt("mlp_max_rel=%.3g (%zu coords) cnn_max_rel=%.3g (%zu coords)", mlp_rel, mlp_n,
                  cnn_rel, cnn_n)};
}

// ---------------------------------------------------------------------------
// 2. Group-l2 prox against a derivative-free 1-D minimizer; sphere projection.

std::pair<bool, std::string> check_prox_projection() {
  constexpr int kInstances = 200;
  constexpr double kOracleTol = 1e-6;  // |  ||prox|| - argmin  |
  constexpr double kNormIdTol = 1e-12; // relative, ||prox|| vs max(||z||-t, 0)
  constexpr double kProjTol = 1e-12;   // | ||project(y)|| - 1 |

  std::mt19937_64 rng = make_rng(2, 0xACC);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  double worst_oracle = 0.0, worst_norm_id = 0.0;
  bool zero_branch_seen = false, exact = true;
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t dim = 1 + static_cast<std::size_t>(i % 8);
    const double scale = (i % 5 == 0) ? 0.05 : 1.5;  // small scale drives the zero branch
    std::vector<double> z(dim);
    for (double& v : z) v = scale * normal(rng);
    const double t = 2.0 * unif(rng);

    const std::vector<double> p = prox_group_l2(z, t);
    const double zn = vec_norm(z);
    const double pn = vec_norm(p);

    // Oracle: the prox objective restricted to the ray through z is
    // phi(s) = 0.5 (s - ||z||)^2 + t s, s >= 0; ternary-search its minimum.
    double lo = 0.0, hi = zn + t + 1.0;
    for (int it = 0; it < 200; ++it) {
      const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
      const auto phi = [&](double s) { return 0.5 * (s - zn) * (s - zn) + t * s; };
      if (phi(m1) < phi(m2)) hi = m2;
      else lo = m1;
    }
    const double s_star = 0.5 * (lo + hi);
    worst_oracle = std::max(worst_oracle, std::abs(pn - s_star));

    if (zn <= t) {
      zero_branch_seen = true;
      for (double v : p)
        if (v != 0.0) exact = false;
    } else {
      const double target = zn - t;
      worst_norm_id = std::max(worst_norm_id, std::abs(pn - target) / std::max(1.0, target));
    }
  }

  double worst_proj = 0.0;
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t dim = 1 + static_cast<std::size_t>(i % 16);
    const double scale = std::pow(10.0, -3.0 + 6.0 * unif(rng));
    std::vector<double> y(dim);
    for (double& v : y) v = scale * normal(rng);
    if (vec_norm(y) == 0.0) y[0] = scale;
    const std::vector<double> q = project_unit_sphere(y);
    worst_proj = std::max(worst_proj, std::abs(vec_norm(q) - 1.0));
  }

  const bool ok = worst_oracle <= kOracleTol && worst_norm_id <= kNormIdTol && exact &&
                  zero_branch_seen && worst_proj <= kProjTol;
  return {ok, fmt("oracle_gap=%.3g norm_identity=%.3g zero_branch_exact=%d proj_err=%.3g",
                  worst_oracle, worst_norm_id, exact && zero_branch_seen ? 1 : 0, worst_proj)};
}

// ---------------------------------------------------------------------------
// 3. Per-unit rebalancing: equal norms, R = 2*Rtilde, function unchanged.

std::pair<bool, std::string> check_unit_balance() {
  constexpr double kNormTol = 1e-12;
  constexpr double kIdentityTol = 1e-10;  // relative, R vs 2 Rtilde
  constexpr double kFunctionTol = 1e-10;  // relative, per output coordinate

  const NetworkSpec spec = build_mlp(4, 12, 6, 4);
  const GroupingScheme scheme = derive_grouping(spec);
  WeightStore store(spec);
  init_weights(store, spec, 77);
  std::mt19937_64 rng = make_rng(77, 0xB1A5);
  std::normal_distribution<double> dist(0.0, 0.1);
  for (Tensor& b : store.mutable_biases())
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = dist(rng);

  const Tensor x = random_tensor({100, 6}, 78);
  const Tensor before = forward(spec, store, x);

  for (std::size_t g = 0; g < scheme.groups.size(); ++g)
    for (std::size_t u = 0; u < scheme.groups[g].unit_count; ++u)
      balance_unit(HomogeneousUnitView(scheme, g, u), store);

  double worst_norm = 0.0;
  for (std::size_t g = 0; g < scheme.groups.size(); ++g)
    for (std::size_t u = 0; u < scheme.groups[g].unit_count; ++u) {
      const HomogeneousUnitView view(scheme, g, u);
      const double wn = vec_norm(view.gather_w(store.weights(), store.biases()));
      const double vn = vec_norm(view.gather_v(store.weights()));
      worst_norm = std::max(worst_norm, std::abs(wn - vn) / std::max(1.0, wn));
    }

  const double r = sum_squared_weights(store, scheme);
  const double rt = path_norm_regularizer(store, scheme);
  const double identity_err = std::abs(r - 2.0 * rt) / std::max(1.0, r);

  const Tensor after = forward(spec, store, x);
  double worst_fn = 0.0;
  for (std::size_t i = 0; i < after.size(); ++i)
    worst_fn = std::max(worst_fn,
                        std::abs(after[i] - before[i]) / std::max(1e-12, std::abs(before[i])));

  const bool ok = worst_norm <= kNormTol && identity_err <= kIdentityTol && worst_fn <= kFunctionTol;
  return {ok, fmt("norm_gap=%.3g R_vs_2Rtilde=%.3g forward_drift=%.3g (%zu units, 100 inputs)",
                  worst_norm, identity_err, worst_fn, scheme.total_units())};
}

// ---------------------------------------------------------------------------
// 4. Layer-wise rebalancing across three coupled groups.

std::pair<bool, std::string> check_layerwise_balance() {
  constexpr double kTotalsTol = 1e-9;   // relative, per-group totals vs geometric mean
  constexpr double kProductTol = 1e-12; // scale factors multiply to one
  constexpr double kFunctionTol = 1e-9;

  const NetworkSpec spec = build_mlp(6, 8, 5, 3);
  const GroupingScheme scheme = derive_grouping(spec);
  WeightStore store(spec);
  init_weights(store, spec, 99);
  std::mt19937_64 rng = make_rng(99, 0xB1A5);
  std::normal_distribution<double> dist(0.0, 0.1);
  for (Tensor& b : store.mutable_biases())
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = dist(rng);

  const Tensor x = random_tensor({50, 5}, 98);
  const Tensor before_out = forward(spec, store, x);
  const std::vector<double> before = group_path_norm_totals(store, scheme);

  const BalanceStatus status = layerwise_balance(spec, store, scheme);
  const std::vector<double> after = group_path_norm_totals(store, scheme);

  double geo = 1.0;
  for (double t : before) geo *= t;
  geo = std::pow(geo, 1.0 / static_cast<double>(before.size()));

  double worst_total = 0.0, scale_product = 1.0;
  for (std::size_t g = 0; g < after.size(); ++g) {
    worst_total = std::max(worst_total, std::abs(after[g] - geo) / geo);
    scale_product *= after[g] / before[g];
  }
  const double product_err = std::abs(scale_product - 1.0);

  const Tensor after_out = forward(spec, store, x);
  double worst_fn = 0.0;
  for (std::size_t i = 0; i < after_out.size(); ++i)
    worst_fn = std::max(worst_fn, std::abs(after_out[i] - before_out[i]) /
                                      std::max(1e-12, std::abs(before_out[i])));

  const bool ok = status == BalanceStatus::kBalanced && before.size() == 3 &&
                  worst_total <= kTotalsTol && product_err <= kProductTol &&
                  worst_fn <= kFunctionTol;
  return {ok, fmt("groups=%zu totals_gap=%.3g scale_product_err=%.3g forward_drift=%.3g",
                  before.size(), worst_total, product_err, worst_fn)};
}

// ---------------------------------------------------------------------------
// 5 / 6 / 8 share one benchmark task and the trained models from 5.

struct Shared {
  bool trained = false;
  LoadedTask task;
  WeightStore best_pathprox;
  WeightStore best_weight_decay;
};
Shared g_shared;

LoadedTask benchmark_task() {
  TaskConfig task;
  task.dataset = "synthetic";
  task.synthetic_n = 500;
  task.synthetic_noise = 0.6;
  task.synthetic_outliers = 0.0;
  task.model = "mlp";
  task.mlp_depth = 2;
  task.mlp_width = 64;
  task.factorized = true;
  return load_task(task, 11);
}

struct TrainedRun {
  double f = 0.0;
  double data_loss = 0.0;
  WeightStore store;
};

TrainedRun train_full_batch(const LoadedTask& lt, Algorithm alg, double lambda, double lr,
                            std::size_t iterations) {
  StepSchedule sched;
  sched.kind = ScheduleKind::kStepDecay;
  sched.base = lr;
  sched.factor = 0.1;
  sched.milestones = {500, 1000};
  OptimizerConfig oc;
  oc.algorithm = alg;
  oc.lambda = lambda;
  oc.schedule = sched;

  TrainedRun run;
  run.store = WeightStore(lt.spec);
  init_weights(run.store, lt.spec, 11);
  Optimizer opt(lt.spec, lt.scheme, oc);
  opt.attach(run.store);
  for (std::size_t t = 1; t <= iterations; ++t)
    opt.step(run.store, lt.train.features, lt.train.labels, t);

  const ObjectiveBreakdown b =
      objectives(lt.spec, run.store, lt.scheme, lt.train.features, lt.train.labels, lambda);
  run.f = b.f_lambda;
  run.data_loss = b.data_loss;
  return run;
}

TrainedRun best_over_lr(const LoadedTask& lt, Algorithm alg, double lambda) {
  const double lrs[] = {0.1, 0.3, 0.5};
  TrainedRun best;
  best.f = std::numeric_limits<double>::infinity();
  for (double lr : lrs) {
    TrainedRun run = train_full_batch(lt, alg, lambda, lr, 2000);
    if (run.f < best.f) best = std::move(run);
  }
  return best;
}

std::pair<bool, std::string> check_objective_minimization() {
  constexpr double kLambda = 1e-4;
  constexpr double kMarginFrac = 0.02;  // required lead, as a fraction of the
                                        // weight-decay regularization gap F - L
  constexpr double kAgreeFrac = 0.10;   // the two baselines must land together
  constexpr double kBudgetSecs = 120.0;

  const auto t0 = std::chrono::steady_clock::now();
  g_shared.task = benchmark_task();
  const LoadedTask& lt = g_shared.task;

  TrainedRun pp = best_over_lr(lt, Algorithm::kPathProx, kLambda);
  TrainedRun wd = best_over_lr(lt, Algorithm::kSgdWeightDecay, kLambda);
  TrainedRun pn = best_over_lr(lt, Algorithm::kSgdPathNorm, kLambda);

  g_shared.best_pathprox = pp.store;
  g_shared.best_weight_decay = wd.store;
  g_shared.trained = true;

  const double gap = wd.f - wd.data_loss;  // what weight decay pays for regularization
  const double lead_wd = wd.f - pp.f;
  const double lead_pn = pn.f - pp.f;
  const double agree = std::abs(pn.f - wd.f);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const bool ok = gap > 0.0 && lead_wd >= kMarginFrac * gap && lead_pn >= kMarginFrac * gap &&
                  agree <= kAgreeFrac * gap && secs < kBudgetSecs;

  return {ok, fmt("F_prox=%.8f F_wd=%.8f F_subgrad=%.8f gap=%.3g lead=%.1f%%/%.1f%% agree=%.1f%%",
                  pp.f, wd.f, pn.f, gap, 100.0 * lead_wd / gap, 100.0 * lead_pn / gap,
                  100.0 * agree / gap)};
}

std::pair<bool, std::string> check_structural_sparsity() {
  constexpr double kLambda = 1e-3;
  constexpr std::size_t kMinZeroUnits = 13;  // at least 20% of the 64 units
  constexpr double kLossRatioMax = 1.05;
  constexpr double kBudgetSecs = 120.0;

  const auto t0 = std::chrono::steady_clock::now();
  const LoadedTask lt = benchmark_task();

  TrainedRun pp = best_over_lr(lt, Algorithm::kPathProx, kLambda);
  TrainedRun wd = best_over_lr(lt, Algorithm::kSgdWeightDecay, kLambda);

  auto zero_units = [&](const WeightStore& store) {
    std::size_t zeros = 0;
    for (std::size_t g = 0; g < lt.scheme.groups.size(); ++g)
      for (std::size_t u = 0; u < lt.scheme.groups[g].unit_count; ++u) {
        const std::vector<double> v =
            HomogeneousUnitView(lt.scheme, g, u).gather_v(store.weights());
        if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) ++zeros;
      }
    return zeros;
  };
  const std::size_t pp_zeros = zero_units(pp.store);
  const std::size_t wd_zeros = zero_units(wd.store);

  const double ratio = std::max(pp.data_loss, wd.data_loss) /
                       std::max(1e-300, std::min(pp.data_loss, wd.data_loss));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const bool ok = pp_zeros >= kMinZeroUnits && wd_zeros == 0 && ratio <= kLossRatioMax &&
                  secs < kBudgetSecs;
  return {ok, fmt("prox_zero_units=%zu/64 wd_zero_units=%zu loss_ratio=%.4f", pp_zeros, wd_zeros,
                  ratio)};
}

// ---------------------------------------------------------------------------
// 7. Prune/retrain protocol on a digit-classification IDX fixture.

Dataset make_digit_fixture(std::size_t per_class, std::uint64_t seed) {
  const std::size_t kH = 28, kW = 28, kClasses = 10;
  const std::size_t n = per_class * kClasses;
  Tensor feats({n, kH, kW});
  std::vector<int> labels(n);
  std::mt19937_64 rng = make_rng(seed, 0xD161);
  std::uniform_int_distribution<int> jitter(-20, 20);
  std::size_t row = 0;
  for (int c = 0; c < static_cast<int>(kClasses); ++c) {
    for (std::size_t k = 0; k < per_class; ++k, ++row) {
      labels[row] = c;
      for (std::size_t p = 0; p < kH * kW; ++p) {
        // A fixed pseudo-random pixel mask per class, bright-on-dark, plus
        // per-example jitter. Quantized to byte levels so IDX round trips.
        const bool on = ((p + 1) * (2 * static_cast<std::size_t>(c) + 3)) % 97 < 22;
        int byte = (on ? 210 : 30) + jitter(rng);
        byte = std::clamp(byte, 0, 255);
        feats[row * kH * kW + p] = static_cast<double>(byte) / 255.0;
      }
    }
  }
  Dataset ds;
  ds.features = std::move(feats);
  ds.labels = std::move(labels);
  ds.num_classes = static_cast<int>(kClasses);
  ds.provenance = "digit fixture";
  return ds;
}

std::pair<bool, std::string> check_prune_retrain() {
  constexpr double kThreshold = 1e-5;  // a unit is dead when ||w|| ||v|| drops below this

  const fs::path dir = scratch("prune_protocol");
  const Dataset train = make_digit_fixture(150, 401);
  const Dataset test = make_digit_fixture(30, 402);
  write_idx(train, (dir / "train-images.idx").string(), (dir / "train-labels.idx").string());
  write_idx(test, (dir / "test-images.idx").string(), (dir / "test-labels.idx").string());

  ExperimentConfig cfg;
  cfg.task.dataset = "idx";
  cfg.task.idx_images = (dir / "train-images.idx").string();
  cfg.task.idx_labels = (dir / "train-labels.idx").string();
  cfg.task.idx_test_images = (dir / "test-images.idx").string();
  cfg.task.idx_test_labels = (dir / "test-labels.idx").string();
  cfg.task.subsample_per_class = 100;
  cfg.task.model = "mlp";
  cfg.task.mlp_depth = 2;
  cfg.task.mlp_width = 64;
  cfg.task.factorized = true;
  cfg.optimizer.algorithm = Algorithm::kSgdWeightDecay;
  cfg.optimizer.lambda = 0.1;
  cfg.optimizer.schedule.kind = ScheduleKind::kConstant;
  cfg.optimizer.schedule.base = 0.1;
  cfg.iterations = 600;
  cfg.eval_interval = 200;
  cfg.batch_size = 100;
  cfg.sparsity_threshold = kThreshold;
  cfg.checkpoint_schedule = {200, 400, 600};
  cfg.retrain_iterations = 300;
  cfg.output_dir = (dir / "out").string();
  cfg.seed = 5;

  const PruneResult res = prune_retrain(cfg);

  bool ok = fs::exists(res.table_path) && res.rows.size() == 3;
  std::size_t total_deactivated = 0;
  double worst_product = 0.0;
  bool zeros_stay_zero = true, accuracies_sane = true;
  for (std::size_t i = 0; ok && i < res.rows.size(); ++i) {
    const PruneRow& row = res.rows[i];
    ok = ok && row.checkpoint_iteration == cfg.checkpoint_schedule[i];
    ok = ok && row.products_at_deactivation.size() == row.deactivated.size();
    for (double p : row.products_at_deactivation) {
      worst_product = std::max(worst_product, p);
      if (!(p < kThreshold)) ok = false;
    }
    for (const auto& [g, u] : row.deactivated) {
      const HomogeneousUnitView view(res.main_run.task.scheme, g, u);
      const std::vector<double> w =
          view.gather_w(row.store_after_retrain.weights(), row.store_after_retrain.biases());
      const std::vector<double> v = view.gather_v(row.store_after_retrain.weights());
      for (double x : w)
        if (x != 0.0) zeros_stay_zero = false;
      for (double x : v)
        if (x != 0.0) zeros_stay_zero = false;
      if (!row.frozen_after_retrain[g][u]) zeros_stay_zero = false;
    }
    total_deactivated += row.deactivated.size();
    if (row.test_accuracy < 0.0 || row.test_accuracy > 1.0) accuracies_sane = false;
  }
  ok = ok && zeros_stay_zero && accuracies_sane && total_deactivated >= 1;

  std::string acc;
  for (const PruneRow& row : res.rows) acc += fmt(" %.3f", row.test_accuracy);
  return {ok, fmt("rows=%zu deactivated=%zu worst_product=%.3g zeros_stay_zero=%d test_acc:%s",
                  res.rows.size(), total_deactivated, worst_product, zeros_stay_zero ? 1 : 0,
                  acc.c_str())};
}

// ---------------------------------------------------------------------------
// 8. Jacobian spectral norms: exactness on linear maps, then the trained pair.

std::pair<bool, std::string> check_lipschitz() {
  constexpr double kLinearTol = 1e-8;

  double worst_linear = 0.0;
  bool all_converged = true;
  for (int i = 0; i < 20; ++i) {
    const std::size_t in = 1 + static_cast<std::size_t>(i % 5);
    const std::size_t out = 1 + static_cast<std::size_t>((i / 2) % 6);
    NetworkSpec spec;
    spec.layers = {LinearLayer{in, out, false}};
    spec.input_shape = {in};
    spec.output_dim = out;
    WeightStore store(spec);
    store.mutable_weights()[0] = random_tensor({out, in}, 500 + static_cast<std::uint64_t>(i));
    const Tensor x = random_tensor({in}, 600 + static_cast<std::uint64_t>(i));
    const SpectralNormResult r =
        jacobian_spectral_norm(spec, store, x, static_cast<std::uint64_t>(i));
    all_converged = all_converged && r.converged;
    const double oracle = svd_sigma_max(store.weights()[0]);
    worst_linear = std::max(worst_linear, rel_err(r.value, oracle));
  }

  if (!g_shared.trained)
    return {false, fmt("linear_max_rel=%.3g but no trained models to compare", worst_linear)};

  const Dataset fresh = synthetic_two_class(200, 0.6, 0.0, 211);
  const LoadedTask& lt = g_shared.task;
  std::vector<double> pp_sigma, wd_sigma;
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    const Tensor xi({2}, {fresh.features(i, 0), fresh.features(i, 1)});
    const SpectralNormResult a = jacobian_spectral_norm(lt.spec, g_shared.best_pathprox, xi, i);
    const SpectralNormResult b = jacobian_spectral_norm(lt.spec, g_shared.best_weight_decay, xi, i);
    all_converged = all_converged && a.converged && b.converged;
    pp_sigma.push_back(a.value);
    wd_sigma.push_back(b.value);
  }
  const double pp_med = median_of(pp_sigma);
  const double wd_med = median_of(wd_sigma);

  const bool ok = worst_linear <= kLinearTol && all_converged && pp_med <= wd_med;
  return {ok, fmt("linear_max_rel=%.3g median_sigma prox=%.4f wd=%.4f (200 fresh points)",
                  worst_linear, pp_med, wd_med)};
}

// ---------------------------------------------------------------------------
// 9. Decision-boundary export through the installed command-line binary.

std::pair<bool, std::string> check_boundary_cli() {
#ifndef PATHPROX_CLI_PATH
  return {false, "command-line binary was not built"};
#else
  constexpr double kProbTol = 1e-12;
  constexpr std::size_t kResolution = 41;

  const fs::path dir = scratch("boundary_cli");

  ExperimentConfig cfg;
  cfg.task.dataset = "synthetic";
  cfg.task.synthetic_n = 500;
  cfg.task.synthetic_noise = 0.6;
  cfg.task.synthetic_outliers = 0.0;
  cfg.task.model = "mlp";
  cfg.task.mlp_depth = 2;
  cfg.task.mlp_width = 16;
  cfg.task.factorized = true;
  cfg.optimizer.algorithm = Algorithm::kPathProx;
  cfg.optimizer.lambda = 1e-4;
  cfg.optimizer.schedule.kind = ScheduleKind::kConstant;
  cfg.optimizer.schedule.base = 0.1;
  cfg.iterations = 500;
  cfg.eval_interval = 100;
  cfg.batch_size = 0;
  cfg.seed = 11;
  cfg.output_dir = (dir / "out").string();
  const fs::path cfg_path = dir / "boundary.json";
  {
    std::ofstream out(cfg_path, std::ios::binary);
    out << config_to_json(cfg);
  }

  auto run_cli_cmd = [&](const std::string& args) {
    const std::string cmd = std::string(PATHPROX_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1 || !WIFEXITED(status)) return -1;
    return WEXITSTATUS(status);
  };

  const int code = run_cli_cmd("boundary --config " + cfg_path.string() + " --resolution " +
                               std::to_string(kResolution) + " --lo -3 --hi 3");
  const int bogus = run_cli_cmd("frobnicate --config " + cfg_path.string());

  const fs::path csv_path = fs::path(cfg.output_dir) / "boundary.csv";
  if (code != 0 || !fs::exists(csv_path))
    return {false, fmt("exit=%d csv_exists=%d", code, fs::exists(csv_path) ? 1 : 0)};

  std::ifstream csv(csv_path);
  std::string header;
  std::getline(csv, header);
  std::vector<std::array<double, 3>> rows;
  std::string line;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::array<double, 3> row{};
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    ss >> row[0] >> row[1] >> row[2];
    rows.push_back(row);
  }

  // Recompute class probabilities from the exported checkpoint at the same
  // grid points; the CSV column must match and probabilities must sum to one.
  const NetworkSpec spec = build_mlp(2, 16, 2, 2, true);
  const Checkpoint ck = load_checkpoint((fs::path(cfg.output_dir) / "final.json").string(), spec);
  Tensor grid({rows.size(), 2});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    grid(r, 0) = rows[r][0];
    grid(r, 1) = rows[r][1];
  }
  const Tensor logits = forward(spec, ck.store, grid);
  double worst_sum = 0.0, worst_match = 0.0;
  bool crossed = false;
  double prev_margin = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double z = logits(r, 0) - logits(r, 1);
    double p0, p1;
    if (z >= 0.0) {
      const double e = std::exp(-z);
      p0 = 1.0 / (1.0 + e);
      p1 = e / (1.0 + e);
    } else {
      const double e = std::exp(z);
      p0 = e / (1.0 + e);
      p1 = 1.0 / (1.0 + e);
    }
    worst_sum = std::max(worst_sum, std::abs(p0 + p1 - 1.0));
    worst_match = std::max(worst_match, std::abs(p0 - rows[r][2]));
    const double margin = rows[r][2] - 0.5;
    if (r > 0 && (margin == 0.0 || (margin > 0) != (prev_margin > 0))) crossed = true;
    prev_margin = margin;
  }

  const bool ok = header == "x,y,p0" && rows.size() == kResolution * kResolution &&
                  worst_sum <= kProbTol && worst_match <= kProbTol && crossed && bogus != 0;
  return {ok, fmt("exit=%d rows=%zu prob_sum_err=%.3g csv_match_err=%.3g level_set=%d bad_cmd=%d",
                  code, rows.size(), worst_sum, worst_match, crossed ? 1 : 0, bogus)};
#endif
}

// ---------------------------------------------------------------------------
// 10. Determinism: byte-identical logs, exact IDX round trip, exact resume.

std::pair<bool, std::string> check_determinism() {
  const fs::path dir = scratch("determinism");

  ExperimentConfig cfg;
  cfg.task.dataset = "synthetic";
  cfg.task.synthetic_n = 100;
  cfg.task.synthetic_noise = 0.3;
  cfg.task.model = "mlp";
  cfg.task.mlp_depth = 2;
  cfg.task.mlp_width = 8;
  cfg.task.factorized = true;
  cfg.optimizer.algorithm = Algorithm::kPathProx;
  cfg.optimizer.lambda = 1e-3;
  cfg.optimizer.schedule.kind = ScheduleKind::kStepDecay;
  cfg.optimizer.schedule.base = 0.2;
  cfg.optimizer.schedule.factor = 0.1;
  cfg.optimizer.schedule.milestones = {15, 22};
  cfg.iterations = 30;
  cfg.eval_interval = 5;
  cfg.batch_size = 16;
  cfg.seed = 7;

  ExperimentConfig cfg_a = cfg;
  cfg_a.output_dir = (dir / "a").string();
  ExperimentConfig cfg_b = cfg;
  cfg_b.output_dir = (dir / "b").string();
  const TrainingArtifacts run_a = run_training(cfg_a);
  const TrainingArtifacts run_b = run_training(cfg_b);
  const bool bytes_equal = read_file(run_a.metrics_path) == read_file(run_b.metrics_path) &&
                           !read_file(run_a.metrics_path).empty();

  // IDX round trip: byte-quantized features must come back bit for bit.
  Dataset small;
  small.features = Tensor({5, 3, 2});
  for (std::size_t i = 0; i < small.features.size(); ++i)
    small.features[i] = static_cast<double>((i * 11) % 256) / 255.0;
  small.labels = {0, 1, 2, 3, 4};
  small.num_classes = 5;
  const fs::path imgs = dir / "small-images.idx", labs = dir / "small-labels.idx";
  write_idx(small, imgs.string(), labs.string());
  const Dataset back = load_idx(imgs.string(), labs.string());
  bool idx_exact = back.features.shape() == small.features.shape() && back.labels == small.labels;
  for (std::size_t i = 0; idx_exact && i < small.features.size(); ++i)
    if (back.features[i] != small.features[i]) idx_exact = false;

  // Resume: a run interrupted at the halfway checkpoint must finish on the
  // exact trajectory of the uninterrupted run.
  ExperimentConfig half = cfg;
  half.iterations = 15;
  half.output_dir = (dir / "half").string();
  const TrainingArtifacts run_half = run_training(half);
  ExperimentConfig resumed = cfg;
  resumed.output_dir = (dir / "resumed").string();
  resumed.resume_from = run_half.final_checkpoint_path;
  const TrainingArtifacts run_resumed = run_training(resumed);
  const bool resume_exact = stores_bitwise_equal(run_a.store, run_resumed.store) &&
                            run_a.metrics.back().f == run_resumed.metrics.back().f &&
                            run_a.metrics.back().data_loss == run_resumed.metrics.back().data_loss;

  const bool ok = bytes_equal && idx_exact && resume_exact;
  return {ok, fmt("metrics_bytes_equal=%d idx_roundtrip_exact=%d resume_exact=%d",
                  bytes_equal ? 1 : 0, idx_exact ? 1 : 0, resume_exact ? 1 : 0)};
}

}  // namespace

int main() {
  std::printf("acceptance suite, scratch at %s\n", scratch_root().string().c_str());
  criterion(1, "gradient-check", check_gradients);
  criterion(2, "prox-and-projection", check_prox_projection);
  criterion(3, "unit-balance-invariance", check_unit_balance);
  criterion(4, "layerwise-balance-invariance", check_layerwise_balance);
  criterion(5, "objective-minimization", check_objective_minimization);
  criterion(6, "structural-sparsity", check_structural_sparsity);
  criterion(7, "prune-retrain-protocol", check_prune_retrain);
  criterion(8, "lipschitz-spectral", check_lipschitz);
  criterion(9, "boundary-cli", check_boundary_cli);
  criterion(10, "determinism-reproducibility", check_determinism);
  std::printf("ACCEPTANCE SUMMARY %d/10 passed\n", 10 - g_failures);
  return g_failures;
}
