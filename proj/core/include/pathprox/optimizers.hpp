#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pathprox/grouping.hpp"
#include "pathprox/network.hpp"

namespace pathprox {

enum class Algorithm {
  kSgdWeightDecay,
  kSgdPathNorm,   // subgradient descent on the path-norm objective G
  kPathProx,      // proximal updates: project w, group-soft-threshold v
  kWeightNormSgd, // weight decay plus re-projection of grouped w
  kLasso,         // elementwise l1 subgradient on all regularized weights
  kGroupLasso,    // group l1 subgradient over unit output vectors v_i
};

enum class ScheduleKind { kConstant, kStepDecay, kInvSqrt, kInvT };

// Positive, non-increasing step sizes, indexed from iteration 1.
//   kConstant: base
//   kStepDecay: base * factor^(decays passed); decays at every `interval`
//               iterations or at the explicit milestones when given
//   kInvSqrt:  base / sqrt(t)
//   kInvT:     base / t   (squared-summable but not summable)
struct StepSchedule {
  ScheduleKind kind = ScheduleKind::kConstant;
  double base = 0.1;
  double factor = 0.1;
  std::size_t interval = 0;
  std::vector<std::size_t> milestones;

  double gamma(std::size_t iteration) const;
  void validate() const;
};

struct OptimizerConfig {
  Algorithm algorithm = Algorithm::kSgdWeightDecay;
  double lambda = 0.0;
  StepSchedule schedule;
  bool balance_layerwise = false;  // PathProx only: layer-wise balance after each step
};

// prox of t*||.||_2 at z: zero at or below the threshold, otherwise a shrink of
// the norm by exactly t (firm thresholding).
std::vector<double> prox_group_l2(std::span<const double> z, double t);

// y / ||y||. Inputs already on the unit sphere (within rounding) pass through
// unchanged, making the projection idempotent bit-for-bit. A norm at or below
// 1e-12 returns the fallback direction; without one it is a degenerate input.
std::vector<double> project_unit_sphere(std::span<const double> y);
std::vector<double> project_unit_sphere(std::span<const double> y,
                                        std::span<const double> fallback);

std::vector<double> soft_threshold(std::span<const double> z, double t);

// Rescales one unit to ||w|| = ||v|| = sqrt(||w|| ||v||) without changing the
// network function. No-op if either side is zero.
void balance_unit(const HomogeneousUnitView& view, WeightStore& store);

enum class BalanceStatus { kBalanced, kAllGroupsZero };

// Equalizes the per-group totals T_j = sum_i ||w_i|| ||v_i|| to their geometric
// mean by scaling each group's output layer, with cumulative bias correction so
// the network function is preserved (the scale factors multiply to 1). Groups
// with T_j = 0 are skipped and excluded from the mean.
BalanceStatus layerwise_balance(const NetworkSpec& spec, WeightStore& store,
                                const GroupingScheme& scheme);

// Function-preserving rescale of every grouped unit to ||w|| = 1 (v absorbs the
// norm). Zero-w units are left untouched. Applied when attaching optimizers
// whose updates assume unit-norm input weights.
void normalize_grouped_inputs(WeightStore& store, const GroupingScheme& scheme);

using FrozenMask = std::vector<std::vector<char>>;  // [group][unit], 1 = frozen at zero

// Per-layer data-loss gradients at the current weights.
struct DataGradients {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;  // empty tensors where a layer has no bias
  double loss = 0.0;
};
DataGradients data_gradients(const NetworkSpec& spec, const WeightStore& store, const Tensor& x,
                             const std::vector<int>& labels);

// One parameter update per algorithm. All gradients are evaluated at the
// incoming weights before any parameter moves. Biases receive plain gradient
// steps, except bias coordinates riding inside unit w vectors, which follow
// their unit's update. `frozen` units are skipped and stay zero.
struct StepContext {
  const NetworkSpec& spec;
  const GroupingScheme& scheme;
  const Tensor& x;
  const std::vector<int>& labels;
  double gamma;
  double lambda;
  const FrozenMask* frozen = nullptr;
};

double sgd_weight_decay_step(WeightStore& store, const StepContext& ctx);
double sgd_pathnorm_step(WeightStore& store, const StepContext& ctx);
double pathprox_step(WeightStore& store, const StepContext& ctx, bool balance_after);
double weight_norm_sgd_step(WeightStore& store, const StepContext& ctx);
double lasso_sgd_step(WeightStore& store, const StepContext& ctx);
double group_lasso_sgd_step(WeightStore& store, const StepContext& ctx);

// Dispatches to the configured algorithm, owns the frozen-unit mask, and
// applies the attach-time normalization PathProx and weight-norm SGD assume.
class Optimizer {
 public:
  Optimizer(const NetworkSpec& spec, const GroupingScheme& scheme, OptimizerConfig config);

  // Call once on a freshly initialized store. Resumed runs skip this.
  void attach(WeightStore& store);

  // Returns the batch data loss measured before the update; throws
  // DivergenceError if it is not finite.
  double step(WeightStore& store, const Tensor& x, const std::vector<int>& labels,
              std::size_t iteration);

  void freeze_unit(WeightStore& store, std::size_t group, std::size_t unit);
  // Freezes every unit whose w or v became exactly zero; returns how many.
  std::size_t freeze_newly_zeroed(WeightStore& store);
  const FrozenMask& frozen() const { return frozen_; }
  void set_frozen(FrozenMask mask);
  std::size_t frozen_count() const;

  const OptimizerConfig& config() const { return config_; }

 private:
  const NetworkSpec* spec_;
  const GroupingScheme* scheme_;
  OptimizerConfig config_;
  FrozenMask frozen_;
};

}  // namespace pathprox
