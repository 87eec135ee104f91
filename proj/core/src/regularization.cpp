#include "pathprox/regularization.hpp"

#include <cmath>

#include "pathprox/errors.hpp"
#include "pathprox/random.hpp"

namespace pathprox {

double residual_sum_squares(const WeightStore& store, const GroupingScheme& scheme) {
  double s = 0.0;
  for (std::size_t layer : scheme.residual_layers) s += l2_norm_squared(store.weight(layer).values());
  return s;
}

double sum_squared_weights(const WeightStore& store, const GroupingScheme& scheme) {
  double s = 0.0;
  for (std::size_t g = 0; g < scheme.groups.size(); ++g) {
    for (std::size_t u = 0; u < scheme.groups[g].unit_count; ++u) {
      HomogeneousUnitView view(scheme, g, u);
      const double wn = view.w_norm(store);
      const double vn = view.v_norm(store);
      s += wn * wn + vn * vn;
    }
  }
  return s + residual_sum_squares(store, scheme);
}

std::vector<double> group_path_norm_totals(const WeightStore& store,
                                           const GroupingScheme& scheme) {
  std::vector<double> totals(scheme.groups.size(), 0.0);
  for (std::size_t g = 0; g < scheme.groups.size(); ++g) {
    for (std::size_t u = 0; u < scheme.groups[g].unit_count; ++u) {
      HomogeneousUnitView view(scheme, g, u);
      totals[g] += view.w_norm(store) * view.v_norm(store);
    }
  }
  return totals;
}

double path_norm_regularizer(const WeightStore& store, const GroupingScheme& scheme) {
  double s = 0.0;
  for (double t : group_path_norm_totals(store, scheme)) s += t;
  return s + 0.5 * residual_sum_squares(store, scheme);
}

ObjectiveBreakdown objectives(const NetworkSpec& spec, const WeightStore& store,
                              const GroupingScheme& scheme, const Tensor& x,
                              const std::vector<int>& labels, double lambda) {
  ObjectiveBreakdown b;
  b.lambda = lambda;
  b.data_loss = evaluate(spec, store, x, labels).loss;
  b.group_totals = group_path_norm_totals(store, scheme);
  b.c_term = residual_sum_squares(store, scheme);
  double grouped_squares = 0.0;
  for (std::size_t g = 0; g < scheme.groups.size(); ++g) {
    for (std::size_t u = 0; u < scheme.groups[g].unit_count; ++u) {
      HomogeneousUnitView view(scheme, g, u);
      const double wn = view.w_norm(store);
      const double vn = view.v_norm(store);
      grouped_squares += wn * wn + vn * vn;
    }
  }
  b.sum_squares = grouped_squares + b.c_term;
  double grouped_path = 0.0;
  for (double t : b.group_totals) grouped_path += t;
  b.path_norm = grouped_path + 0.5 * b.c_term;
  b.f_lambda = b.data_loss + 0.5 * lambda * b.sum_squares;
  b.g_lambda = b.data_loss + lambda * b.path_norm;
  return b;
}

double structural_sparsity(const WeightStore& store, const GroupingScheme& scheme,
                           double threshold) {
  const std::size_t total = scheme.total_units();
  if (total == 0) return 1.0;
  std::size_t active = 0;
  for (std::size_t g = 0; g < scheme.groups.size(); ++g) {
    for (std::size_t u = 0; u < scheme.groups[g].unit_count; ++u) {
      HomogeneousUnitView view(scheme, g, u);
      if (view.w_norm(store) * view.v_norm(store) > threshold) ++active;
    }
  }
  return static_cast<double>(active) / static_cast<double>(total);
}

double unit_lipschitz_bound(const HomogeneousUnitView& view, const WeightStore& store) {
  return view.w_norm(store) * view.v_norm(store);
}

SpectralNormResult jacobian_spectral_norm(const NetworkSpec& spec, const WeightStore& store,
                                          const Tensor& x, std::uint64_t seed) {
  if (x.shape() != spec.input_shape) {
    throw DimensionError("jacobian_spectral_norm: sample " + x.shape_str() +
                         " does not match input shape " + shape_to_string(spec.input_shape));
  }
  std::vector<std::size_t> batched_shape{1};
  for (std::size_t d : x.shape()) batched_shape.push_back(d);
  Tensor batched = x.reshaped(batched_shape);

  TrainingForward fw = forward_training(spec, store, batched);
  const Tensor& logits = fw.tape.value(fw.logits);
  const std::size_t k_out = logits.dim(1);
  const std::size_t n_in = x.size();

  // J row by row: one backward per logit coordinate.
  Tensor jac({k_out, n_in});
  for (std::size_t k = 0; k < k_out; ++k) {
    Tensor seed_cotangent(logits.shape());
    seed_cotangent(0, k) = 1.0;
    auto grads = fw.tape.backward(fw.logits, seed_cotangent);
    const Tensor& gx = grads[static_cast<std::size_t>(fw.input)];
    for (std::size_t j = 0; j < n_in; ++j) jac(k, j) = gx[j];
  }

  auto apply_j = [&](const std::vector<double>& v, std::vector<double>& out) {
    out.assign(k_out, 0.0);
    for (std::size_t r = 0; r < k_out; ++r)
      for (std::size_t j = 0; j < n_in; ++j) out[r] += jac(r, j) * v[j];
  };
  auto apply_jt = [&](const std::vector<double>& u, std::vector<double>& out) {
    out.assign(n_in, 0.0);
    for (std::size_t r = 0; r < k_out; ++r)
      for (std::size_t j = 0; j < n_in; ++j) out[j] += jac(r, j) * u[r];
  };

  auto rng = make_rng(seed, rng_stream::kPowerIteration);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n_in);
  for (double& e : v) e = dist(rng);
  const double vn = l2_norm(v);
  if (vn == 0.0) v[0] = 1.0;
  else
    for (double& e : v) e /= vn;

  SpectralNormResult result;
  constexpr int kMaxIters = 1000;
  constexpr double kRelTol = 1e-9;
  double sigma_prev = -1.0;
  std::vector<double> u, w;
  for (int it = 1; it <= kMaxIters; ++it) {
    result.iterations = it;
    apply_j(v, u);
    const double sigma = l2_norm(u);
    result.value = sigma;
    if (sigma == 0.0) {
      // v is annihilated; for an all-zero Jacobian that is the answer.
      result.converged = true;
      return result;
    }
    if (sigma_prev >= 0.0 && std::abs(sigma - sigma_prev) <= kRelTol * sigma) {
      result.converged = true;
      return result;
    }
    sigma_prev = sigma;
    apply_jt(u, w);
    const double wn = l2_norm(w);
    if (wn == 0.0) {
      result.converged = true;
      return result;
    }
    for (std::size_t j = 0; j < n_in; ++j) v[j] = w[j] / wn;
  }
  result.converged = false;
  return result;
}

}  // namespace pathprox
