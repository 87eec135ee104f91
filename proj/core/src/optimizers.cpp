#include "pathprox/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pathprox/errors.hpp"

namespace pathprox {

double StepSchedule::gamma(std::size_t iteration) const {
  if (iteration == 0) throw ContractError("step schedule: iterations are indexed from 1");
  switch (kind) {
    case ScheduleKind::kConstant:
      return base;
    case ScheduleKind::kStepDecay: {
      std::size_t decays = 0;
      if (!milestones.empty()) {
        for (std::size_t m : milestones)
          if (iteration > m) ++decays;
      } else {
        decays = (iteration - 1) / interval;
      }
      return base * std::pow(factor, static_cast<double>(decays));
    }
    case ScheduleKind::kInvSqrt:
      return base / std::sqrt(static_cast<double>(iteration));
    case ScheduleKind::kInvT:
      return base / static_cast<double>(iteration);
  }
  throw ContractError("step schedule: unknown kind");
}

void StepSchedule::validate() const {
  if (!(base > 0.0)) throw ConfigError("step schedule: base step size must be positive");
  if (kind == ScheduleKind::kStepDecay) {
    if (!(factor > 0.0) || factor > 1.0) {
      throw ConfigError("step schedule: decay factor must lie in (0, 1]");
    }
    if (milestones.empty() && interval == 0) {
      throw ConfigError("step schedule: step decay needs an interval or milestones");
    }
    for (std::size_t i = 0; i + 1 < milestones.size(); ++i) {
      if (milestones[i + 1] <= milestones[i]) {
        throw ConfigError("step schedule: milestones must be strictly increasing");
      }
    }
  }
}

std::vector<double> prox_group_l2(std::span<const double> z, double t) {
  if (t < 0.0) throw ContractError("prox_group_l2: threshold must be nonnegative");
  std::vector<double> out(z.begin(), z.end());
  if (t == 0.0) return out;
  const double n = l2_norm(z);
  if (n <= t) {
    std::fill(out.begin(), out.end(), 0.0);
    return out;
  }
  const double scale = (n - t) / n;
  for (double& x : out) x *= scale;
  return out;
}

namespace {

// Computed norms of vectors already on the unit sphere wobble by a few ulps per
// accumulated term; anything inside this band counts as unit norm.
double snap_tolerance(std::size_t dim) {
  return (2.0 * static_cast<double>(dim) + 16.0) * std::numeric_limits<double>::epsilon();
}

constexpr double kZeroNormThreshold = 1e-12;

std::vector<double> project_impl(std::span<const double> y, const std::vector<double>* fallback) {
  const double n = l2_norm(y);
  if (n <= kZeroNormThreshold) {
    if (fallback) return *fallback;
    throw DegenerateInputError("project_unit_sphere: input norm " + std::to_string(n) +
                               " is at or below 1e-12 and no fallback direction was given");
  }
  const double tol = snap_tolerance(y.size());
  if (std::abs(n - 1.0) <= tol) return std::vector<double>(y.begin(), y.end());
  std::vector<double> u(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) u[i] = y[i] / n;
  const double m = l2_norm(u);
  if (std::abs(m - 1.0) > tol) {
    for (double& x : u) x /= m;
  }
  return u;
}

}  // namespace

std::vector<double> project_unit_sphere(std::span<const double> y) {
  return project_impl(y, nullptr);
}

std::vector<double> project_unit_sphere(std::span<const double> y,
                                        std::span<const double> fallback) {
  std::vector<double> fb(fallback.begin(), fallback.end());
  return project_impl(y, &fb);
}

std::vector<double> soft_threshold(std::span<const double> z, double t) {
  if (t < 0.0) throw ContractError("soft_threshold: threshold must be nonnegative");
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double a = std::abs(z[i]) - t;
    out[i] = a > 0.0 ? (z[i] > 0.0 ? a : -a) : 0.0;
  }
  return out;
}

void balance_unit(const HomogeneousUnitView& view, WeightStore& store) {
  const double a = view.w_norm(store);
  const double b = view.v_norm(store);
  if (a == 0.0 || b == 0.0) return;
  const double alpha = std::sqrt(b / a);
  if (alpha == 1.0) return;
  view.scale_w(store.mutable_weights(), store.mutable_biases(), alpha);
  view.scale_v(store.mutable_weights(), 1.0 / alpha);
}

BalanceStatus layerwise_balance(const NetworkSpec& spec, WeightStore& store,
                                const GroupingScheme& scheme) {
  (void)spec;
  if (scheme.groups.empty()) return BalanceStatus::kBalanced;

  std::vector<double> totals(scheme.groups.size(), 0.0);
  for (std::size_t g = 0; g < scheme.groups.size(); ++g) {
    for (std::size_t u = 0; u < scheme.groups[g].unit_count; ++u) {
      HomogeneousUnitView view(scheme, g, u);
      totals[g] += view.w_norm(store) * view.v_norm(store);
    }
  }

  double log_sum = 0.0;
  std::size_t participating = 0;
  for (double t : totals) {
    if (t > 0.0) {
      log_sum += std::log(t);
      ++participating;
    }
  }
  if (participating == 0) return BalanceStatus::kAllGroupsZero;
  const double geo_mean = std::exp(log_sum / static_cast<double>(participating));

  // Output-layer ordinal -> group, so the walk below can apply scales in
  // network order while biases pick up the cumulative correction.
  std::vector<std::ptrdiff_t> group_of_output(store.layer_count(), -1);
  for (std::size_t g = 0; g < scheme.groups.size(); ++g) {
    group_of_output[scheme.groups[g].output_layer] = static_cast<std::ptrdiff_t>(g);
  }

  auto& weights = store.mutable_weights();
  auto& biases = store.mutable_biases();
  double cumulative = 1.0;
  for (std::size_t layer = 0; layer < weights.size(); ++layer) {
    const std::ptrdiff_t g = group_of_output[layer];
    if (g >= 0 && totals[static_cast<std::size_t>(g)] > 0.0) {
      const double s = geo_mean / totals[static_cast<std::size_t>(g)];
      for (double& x : weights[layer].values()) x *= s;
      cumulative *= s;
    }
    if (biases[layer].size() > 0 && cumulative != 1.0) {
      for (double& x : biases[layer].values()) x *= cumulative;
    }
  }
  return BalanceStatus::kBalanced;
}

void normalize_grouped_inputs(WeightStore& store, const GroupingScheme& scheme) {
  for (std::size_t g = 0; g < scheme.groups.size(); ++g) {
    for (std::size_t u = 0; u < scheme.groups[g].unit_count; ++u) {
      HomogeneousUnitView view(scheme, g, u);
      const double a = view.w_norm(store);
      if (a <= kZeroNormThreshold) continue;
      const std::size_t dim = view.w(store).size();
      if (std::abs(a - 1.0) <= snap_tolerance(dim)) continue;
      // Pure rescale (not set_w) so a unit bias outside the penalized
      // coordinates shrinks with w and the network function is preserved.
      view.scale_w(store.mutable_weights(), store.mutable_biases(), 1.0 / a);
      double inverse = a;
      const double m = view.w_norm(store);
      if (m > 0.0 && std::abs(m - 1.0) > snap_tolerance(dim)) {
        view.scale_w(store.mutable_weights(), store.mutable_biases(), 1.0 / m);
        inverse *= m;
      }
      view.scale_v(store.mutable_weights(), inverse);
    }
  }
}

DataGradients data_gradients(const NetworkSpec& spec, const WeightStore& store, const Tensor& x,
                             const std::vector<int>& labels) {
  TrainingForward fw = forward_training(spec, store, x);
  auto ce = fw.tape.softmax_cross_entropy(fw.logits, labels);
  auto grads = fw.tape.backward(ce.loss);

  DataGradients out;
  out.loss = fw.tape.value(ce.loss)[0];
  out.weights.reserve(fw.weight_ids.size());
  out.biases.reserve(fw.bias_ids.size());
  for (std::size_t k = 0; k < fw.weight_ids.size(); ++k) {
    out.weights.push_back(std::move(grads[static_cast<std::size_t>(fw.weight_ids[k])]));
    out.biases.push_back(fw.bias_ids[k] == kNoValue
                             ? Tensor()
                             : std::move(grads[static_cast<std::size_t>(fw.bias_ids[k])]));
  }
  return out;
}

namespace {

bool is_frozen(const StepContext& ctx, std::size_t g, std::size_t u) {
  return ctx.frozen && !ctx.frozen->empty() && (*ctx.frozen)[g][u] != 0;
}

double decay_factor(double lambda, double gamma) {
  if (lambda * gamma >= 1.0) {
    throw ConfigError("weight decay: lambda * gamma = " + std::to_string(lambda * gamma) +
                      " >= 1 would flip parameter signs; reduce the step size");
  }
  return 1.0 - lambda * gamma;
}

// Group-input-layer ordinals whose bias coordinates ride inside the unit w
// vectors (and are therefore written by per-unit updates).
std::vector<char> unit_handled_bias_layers(const GroupingScheme& scheme, std::size_t layers) {
  std::vector<char> handled(layers, 0);
  if (scheme.include_bias_in_unit) {
    for (const UnitGroup& g : scheme.groups) handled[g.input_layer] = 1;
  }
  return handled;
}

void plain_bias_steps(WeightStore& store, const DataGradients& grads, double gamma,
                      const std::vector<char>& skip) {
  auto& biases = store.mutable_biases();
  for (std::size_t k = 0; k < biases.size(); ++k) {
    if (biases[k].size() == 0 || skip[k]) continue;
    for (std::size_t i = 0; i < biases[k].size(); ++i) biases[k][i] -= gamma * grads.biases[k][i];
  }
}

void zero_frozen_units(WeightStore& store, const GroupingScheme& scheme,
                       const FrozenMask* frozen) {
  if (!frozen || frozen->empty()) return;
  auto& weights = store.mutable_weights();
  auto& biases = store.mutable_biases();
  for (std::size_t g = 0; g < scheme.groups.size(); ++g) {
    for (std::size_t u = 0; u < scheme.groups[g].unit_count; ++u) {
      if ((*frozen)[g][u] == 0) continue;
      HomogeneousUnitView view(scheme, g, u);
      view.scatter_w(weights, biases,
                     std::vector<double>(view.gather_w(weights, biases).size(), 0.0));
      view.scatter_v(weights, std::vector<double>(view.gather_v(weights).size(), 0.0));
    }
  }
}

// Marks every parameter layer covered by per-unit updates: group input layers
// under `inputs`, output layers under `outputs`.
std::vector<char> grouped_layers(const GroupingScheme& scheme, std::size_t layers, bool inputs,
                                 bool outputs) {
  std::vector<char> mask(layers, 0);
  for (const UnitGroup& g : scheme.groups) {
    if (inputs) mask[g.input_layer] = 1;
    if (outputs) mask[g.output_layer] = 1;
  }
  return mask;
}

}  // namespace

double sgd_weight_decay_step(WeightStore& store, const StepContext& ctx) {
  DataGradients grads = data_gradients(ctx.spec, store, ctx.x, ctx.labels);
  const double factor = decay_factor(ctx.lambda, ctx.gamma);
  auto& weights = store.mutable_weights();
  auto& biases = store.mutable_biases();
  for (std::size_t k = 0; k < weights.size(); ++k) {
    for (std::size_t i = 0; i < weights[k].size(); ++i) {
      weights[k][i] = (weights[k][i] - ctx.gamma * grads.weights[k][i]) * factor;
    }
  }
  const auto regularized_bias = unit_handled_bias_layers(ctx.scheme, weights.size());
  for (std::size_t k = 0; k < biases.size(); ++k) {
    if (biases[k].size() == 0) continue;
    const double f = regularized_bias[k] ? factor : 1.0;
    for (std::size_t i = 0; i < biases[k].size(); ++i) {
      biases[k][i] = (biases[k][i] - ctx.gamma * grads.biases[k][i]) * f;
    }
  }
  zero_frozen_units(store, ctx.scheme, ctx.frozen);
  return grads.loss;
}

double sgd_pathnorm_step(WeightStore& store, const StepContext& ctx) {
  DataGradients grads = data_gradients(ctx.spec, store, ctx.x, ctx.labels);
  auto& weights = store.mutable_weights();
  auto& biases = store.mutable_biases();

  for (std::size_t g = 0; g < ctx.scheme.groups.size(); ++g) {
    for (std::size_t u = 0; u < ctx.scheme.groups[g].unit_count; ++u) {
      if (is_frozen(ctx, g, u)) continue;
      HomogeneousUnitView view(ctx.scheme, g, u);
      std::vector<double> w = view.gather_w(weights, biases);
      std::vector<double> v = view.gather_v(weights);
      const std::vector<double> gw = view.gather_w(grads.weights, grads.biases);
      const std::vector<double> gv = view.gather_v(grads.weights);
      const double wn = l2_norm(w);
      const double vn = l2_norm(v);
      // d(||w|| ||v||)/dw = ||v|| w/||w||, subgradient 0 at the origin.
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double sub = wn > 0.0 ? vn * w[i] / wn : 0.0;
        w[i] -= ctx.gamma * (gw[i] + ctx.lambda * sub);
      }
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double sub = vn > 0.0 ? wn * v[i] / vn : 0.0;
        v[i] -= ctx.gamma * (gv[i] + ctx.lambda * sub);
      }
      view.scatter_w(weights, biases, w);
      view.scatter_v(weights, v);
    }
  }
  for (std::size_t layer : ctx.scheme.residual_layers) {
    // Residual term (c/2) sum ||v||^2 contributes lambda * v.
    for (std::size_t i = 0; i < weights[layer].size(); ++i) {
      weights[layer][i] -=
          ctx.gamma * (grads.weights[layer][i] + ctx.lambda * weights[layer][i]);
    }
  }
  plain_bias_steps(store, grads, ctx.gamma,
                   unit_handled_bias_layers(ctx.scheme, weights.size()));
  zero_frozen_units(store, ctx.scheme, ctx.frozen);
  return grads.loss;
}

double pathprox_step(WeightStore& store, const StepContext& ctx, bool balance_after) {
  DataGradients grads = data_gradients(ctx.spec, store, ctx.x, ctx.labels);
  auto& weights = store.mutable_weights();
  auto& biases = store.mutable_biases();
  const double threshold = ctx.lambda * ctx.gamma;

  for (std::size_t g = 0; g < ctx.scheme.groups.size(); ++g) {
    for (std::size_t u = 0; u < ctx.scheme.groups[g].unit_count; ++u) {
      if (is_frozen(ctx, g, u)) continue;
      HomogeneousUnitView view(ctx.scheme, g, u);
      std::vector<double> w = view.gather_w(weights, biases);
      const std::vector<double> gw = view.gather_w(grads.weights, grads.biases);
      std::vector<double> y(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) y[i] = w[i] - ctx.gamma * gw[i];
      view.scatter_w(weights, biases, project_unit_sphere(y, w));

      std::vector<double> v = view.gather_v(weights);
      const std::vector<double> gv = view.gather_v(grads.weights);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= ctx.gamma * gv[i];
      view.scatter_v(weights, prox_group_l2(v, threshold));
    }
  }
  if (!ctx.scheme.residual_layers.empty()) {
    const double factor = decay_factor(ctx.lambda, ctx.gamma);
    for (std::size_t layer : ctx.scheme.residual_layers) {
      for (std::size_t i = 0; i < weights[layer].size(); ++i) {
        weights[layer][i] = (weights[layer][i] - ctx.gamma * grads.weights[layer][i]) * factor;
      }
    }
  }
  plain_bias_steps(store, grads, ctx.gamma,
                   unit_handled_bias_layers(ctx.scheme, weights.size()));
  if (balance_after) layerwise_balance(ctx.spec, store, ctx.scheme);
  zero_frozen_units(store, ctx.scheme, ctx.frozen);
  return grads.loss;
}

double weight_norm_sgd_step(WeightStore& store, const StepContext& ctx) {
  // Pre-step unit directions serve as fallbacks if a gradient step lands on zero.
  std::vector<std::vector<std::vector<double>>> previous_w(ctx.scheme.groups.size());
  for (std::size_t g = 0; g < ctx.scheme.groups.size(); ++g) {
    previous_w[g].resize(ctx.scheme.groups[g].unit_count);
    for (std::size_t u = 0; u < ctx.scheme.groups[g].unit_count; ++u) {
      previous_w[g][u] = HomogeneousUnitView(ctx.scheme, g, u).w(store);
    }
  }

  const double loss = sgd_weight_decay_step(store, ctx);

  auto& weights = store.mutable_weights();
  auto& biases = store.mutable_biases();
  for (std::size_t g = 0; g < ctx.scheme.groups.size(); ++g) {
    for (std::size_t u = 0; u < ctx.scheme.groups[g].unit_count; ++u) {
      if (is_frozen(ctx, g, u)) continue;
      HomogeneousUnitView view(ctx.scheme, g, u);
      view.scatter_w(weights, biases,
                     project_unit_sphere(view.gather_w(weights, biases), previous_w[g][u]));
    }
  }
  return loss;
}

double lasso_sgd_step(WeightStore& store, const StepContext& ctx) {
  DataGradients grads = data_gradients(ctx.spec, store, ctx.x, ctx.labels);
  auto& weights = store.mutable_weights();
  auto& biases = store.mutable_biases();
  auto sign = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };

  for (std::size_t k = 0; k < weights.size(); ++k) {
    for (std::size_t i = 0; i < weights[k].size(); ++i) {
      weights[k][i] -= ctx.gamma * (grads.weights[k][i] + ctx.lambda * sign(weights[k][i]));
    }
  }
  const auto regularized_bias = unit_handled_bias_layers(ctx.scheme, weights.size());
  for (std::size_t k = 0; k < biases.size(); ++k) {
    if (biases[k].size() == 0) continue;
    const double l1 = regularized_bias[k] ? ctx.lambda : 0.0;
    for (std::size_t i = 0; i < biases[k].size(); ++i) {
      biases[k][i] -= ctx.gamma * (grads.biases[k][i] + l1 * sign(biases[k][i]));
    }
  }
  zero_frozen_units(store, ctx.scheme, ctx.frozen);
  return grads.loss;
}

double group_lasso_sgd_step(WeightStore& store, const StepContext& ctx) {
  DataGradients grads = data_gradients(ctx.spec, store, ctx.x, ctx.labels);
  auto& weights = store.mutable_weights();
  auto& biases = store.mutable_biases();

  for (std::size_t g = 0; g < ctx.scheme.groups.size(); ++g) {
    for (std::size_t u = 0; u < ctx.scheme.groups[g].unit_count; ++u) {
      if (is_frozen(ctx, g, u)) continue;
      HomogeneousUnitView view(ctx.scheme, g, u);
      std::vector<double> v = view.gather_v(weights);
      const std::vector<double> gv = view.gather_v(grads.weights);
      const double vn = l2_norm(v);
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double sub = vn > 0.0 ? v[i] / vn : 0.0;
        v[i] -= ctx.gamma * (gv[i] + ctx.lambda * sub);
      }
      view.scatter_v(weights, v);
    }
  }
  // Everything outside the penalized v columns takes a plain gradient step.
  const auto output_layers = grouped_layers(ctx.scheme, weights.size(), false, true);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (output_layers[k]) continue;
    for (std::size_t i = 0; i < weights[k].size(); ++i) {
      weights[k][i] -= ctx.gamma * grads.weights[k][i];
    }
  }
  plain_bias_steps(store, grads, ctx.gamma, std::vector<char>(weights.size(), 0));
  zero_frozen_units(store, ctx.scheme, ctx.frozen);
  return grads.loss;
}

Optimizer::Optimizer(const NetworkSpec& spec, const GroupingScheme& scheme,
                     OptimizerConfig config)
    : spec_(&spec), scheme_(&scheme), config_(std::move(config)) {
  config_.schedule.validate();
  if (config_.lambda < 0.0) throw ConfigError("optimizer: lambda must be nonnegative");
  frozen_.resize(scheme.groups.size());
  for (std::size_t g = 0; g < scheme.groups.size(); ++g) {
    frozen_[g].assign(scheme.groups[g].unit_count, 0);
  }
}

void Optimizer::attach(WeightStore& store) {
  if (config_.algorithm == Algorithm::kPathProx ||
      config_.algorithm == Algorithm::kWeightNormSgd) {
    normalize_grouped_inputs(store, *scheme_);
  }
}

double Optimizer::step(WeightStore& store, const Tensor& x, const std::vector<int>& labels,
                       std::size_t iteration) {
  const double gamma = config_.schedule.gamma(iteration);
  StepContext ctx{*spec_, *scheme_, x, labels, gamma, config_.lambda, &frozen_};
  double loss = 0.0;
  switch (config_.algorithm) {
    case Algorithm::kSgdWeightDecay:
      loss = sgd_weight_decay_step(store, ctx);
      break;
    case Algorithm::kSgdPathNorm:
      loss = sgd_pathnorm_step(store, ctx);
      break;
    case Algorithm::kPathProx:
      loss = pathprox_step(store, ctx, config_.balance_layerwise);
      break;
    case Algorithm::kWeightNormSgd:
      loss = weight_norm_sgd_step(store, ctx);
      break;
    case Algorithm::kLasso:
      loss = lasso_sgd_step(store, ctx);
      break;
    case Algorithm::kGroupLasso:
      loss = group_lasso_sgd_step(store, ctx);
      break;
  }
  if (!std::isfinite(loss)) {
    throw DivergenceError("training diverged: non-finite loss at iteration " +
                          std::to_string(iteration));
  }
  return loss;
}

void Optimizer::freeze_unit(WeightStore& store, std::size_t group, std::size_t unit) {
  if (group >= frozen_.size() || unit >= frozen_[group].size()) {
    throw IndexError("freeze_unit: unit (" + std::to_string(group) + "," + std::to_string(unit) +
                     ") out of range");
  }
  frozen_[group][unit] = 1;
  HomogeneousUnitView view(*scheme_, group, unit);
  auto& weights = store.mutable_weights();
  auto& biases = store.mutable_biases();
  view.scatter_w(weights, biases,
                 std::vector<double>(view.gather_w(weights, biases).size(), 0.0));
  view.scatter_v(weights, std::vector<double>(view.gather_v(weights).size(), 0.0));
}

std::size_t Optimizer::freeze_newly_zeroed(WeightStore& store) {
  std::size_t count = 0;
  for (std::size_t g = 0; g < scheme_->groups.size(); ++g) {
    for (std::size_t u = 0; u < scheme_->groups[g].unit_count; ++u) {
      if (frozen_[g][u]) continue;
      HomogeneousUnitView view(*scheme_, g, u);
      if (view.w_is_zero(store.weights(), store.biases()) || view.v_is_zero(store.weights())) {
        freeze_unit(store, g, u);
        ++count;
      }
    }
  }
  return count;
}

void Optimizer::set_frozen(FrozenMask mask) {
  if (mask.size() != frozen_.size()) {
    throw ContractError("set_frozen: mask has " + std::to_string(mask.size()) + " groups, expected " +
                        std::to_string(frozen_.size()));
  }
  for (std::size_t g = 0; g < mask.size(); ++g) {
    if (mask[g].size() != frozen_[g].size()) {
      throw ContractError("set_frozen: group " + std::to_string(g) + " has " +
                          std::to_string(mask[g].size()) + " units, expected " +
                          std::to_string(frozen_[g].size()));
    }
  }
  frozen_ = std::move(mask);
}

std::size_t Optimizer::frozen_count() const {
  std::size_t n = 0;
  for (const auto& g : frozen_)
    for (char f : g) n += f != 0;
  return n;
}

}  // namespace pathprox
