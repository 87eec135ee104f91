#pragma once

#include <cstdint>
#include <vector>

#include "pathprox/grouping.hpp"
#include "pathprox/network.hpp"

namespace pathprox {

// Both objectives around one data loss:
//   F = data_loss + (lambda/2) * sum_squares        (weight decay objective)
//   G = data_loss + lambda * path_norm              (path-norm objective)
// sum_squares counts every regularized parameter once; path_norm sums
// ||w_i|| * ||v_i|| over grouped units plus half the residual square term.
struct ObjectiveBreakdown {
  double data_loss = 0.0;
  double sum_squares = 0.0;   // R
  double path_norm = 0.0;     // R~
  double c_term = 0.0;        // residual sum of squares (counted once in R, halved in R~)
  double f_lambda = 0.0;
  double g_lambda = 0.0;
  double lambda = 0.0;
  std::vector<double> group_totals;  // T_j = sum_i ||w_i|| ||v_i|| per group
};

double sum_squared_weights(const WeightStore& store, const GroupingScheme& scheme);
double path_norm_regularizer(const WeightStore& store, const GroupingScheme& scheme);
std::vector<double> group_path_norm_totals(const WeightStore& store,
                                           const GroupingScheme& scheme);
double residual_sum_squares(const WeightStore& store, const GroupingScheme& scheme);

ObjectiveBreakdown objectives(const NetworkSpec& spec, const WeightStore& store,
                              const GroupingScheme& scheme, const Tensor& x,
                              const std::vector<int>& labels, double lambda);

// Fraction of grouped units with ||w|| * ||v|| strictly above threshold.
// Networks with no grouped units report 1.0 (nothing is prunable).
double structural_sparsity(const WeightStore& store, const GroupingScheme& scheme,
                           double threshold);

// Cauchy-Schwarz bound on the unit's contribution to the network Lipschitz constant.
double unit_lipschitz_bound(const HomogeneousUnitView& view, const WeightStore& store);

struct SpectralNormResult {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Largest singular value of the logits-vs-input Jacobian at sample x
// ([n] or [C,H,W], unbatched). The Jacobian is materialized row by row through
// backward passes, then power iteration runs on J^T J until the estimate moves
// by less than 1e-9 relative (at most 1000 iterations; non-convergence is
// flagged, carrying the last iterate).
SpectralNormResult jacobian_spectral_norm(const NetworkSpec& spec, const WeightStore& store,
                                          const Tensor& x, std::uint64_t seed = 0);

}  // namespace pathprox
