#include "pathprox/grouping.hpp"

#include <cmath>
#include <string>

#include "pathprox/errors.hpp"

namespace pathprox {

std::size_t GroupingScheme::total_units() const {
  std::size_t n = 0;
  for (const UnitGroup& g : groups) n += g.unit_count;
  return n;
}

namespace {

enum class Kind { kLinear, kConv };

Kind layer_kind(const LayerDesc& d) {
  return std::holds_alternative<LinearLayer>(d) ? Kind::kLinear : Kind::kConv;
}

// A pair is valid when only homogeneous layers separate its members: ReLU for
// linear pairs, ReLU plus at most one pooling layer for conv pairs.
bool between_ok(const NetworkSpec& spec, std::size_t from, std::size_t to, Kind kind,
                std::optional<std::size_t>& pool_index) {
  pool_index.reset();
  for (std::size_t i = from + 1; i < to; ++i) {
    const LayerDesc& d = spec.layers[i];
    if (std::holds_alternative<ReluLayer>(d)) continue;
    if (std::holds_alternative<PoolLayer>(d) && kind == Kind::kConv && !pool_index) {
      pool_index = i;
      continue;
    }
    return false;
  }
  return true;
}

std::size_t out_width(const LayerDesc& d) {
  if (const auto* lin = std::get_if<LinearLayer>(&d)) return lin->out;
  return std::get<ConvLayer>(d).out_channels;
}

}  // namespace

GroupingScheme derive_grouping(const NetworkSpec& spec, bool include_bias_in_unit) {
  GroupingScheme scheme;
  scheme.include_bias_in_unit = include_bias_in_unit;
  const auto params = spec.parameter_layers();

  std::size_t i = 0;
  while (i < params.size()) {
    if (i + 1 < params.size()) {
      const LayerDesc& first = spec.layers[params[i]];
      const LayerDesc& second = spec.layers[params[i + 1]];
      std::optional<std::size_t> pool_index;
      if (layer_kind(first) == layer_kind(second) &&
          between_ok(spec, params[i], params[i + 1], layer_kind(first), pool_index)) {
        UnitGroup g;
        g.input_layer = i;
        g.output_layer = i + 1;
        g.input_spec_index = params[i];
        g.output_spec_index = params[i + 1];
        g.pool_between = pool_index;
        g.unit_count = out_width(first);
        scheme.groups.push_back(g);
        i += 2;
        continue;
      }
    }
    scheme.residual_layers.push_back(i);
    ++i;
  }
  return scheme;
}

HomogeneousUnitView::HomogeneousUnitView(const GroupingScheme& scheme, std::size_t group,
                                         std::size_t unit)
    : scheme_(&scheme), group_(group), unit_(unit) {
  if (group >= scheme.groups.size()) {
    throw IndexError("unit view: group " + std::to_string(group) + " out of range (" +
                     std::to_string(scheme.groups.size()) + " groups)");
  }
  if (unit >= scheme.groups[group].unit_count) {
    throw IndexError("unit view: unit " + std::to_string(unit) + " out of range (" +
                     std::to_string(scheme.groups[group].unit_count) + " units in group " +
                     std::to_string(group) + ")");
  }
}

const UnitGroup& HomogeneousUnitView::group_info() const { return scheme_->groups[group_]; }

namespace {

// Applies fn to each element of unit row `unit` of an input-layer tensor
// (linear [out,in] row or conv [OC,IC,kh,kw] filter block; both contiguous).
template <typename TensorT, typename Fn>
void for_each_w_weight(TensorT& t, std::size_t unit, Fn&& fn) {
  const std::size_t block = t.size() / t.dim(0);
  double* base = const_cast<double*>(t.data()) + unit * block;
  for (std::size_t j = 0; j < block; ++j) fn(base[j]);
}

// Applies fn to each element of unit column `unit` of an output-layer tensor
// (linear [out, units] column or conv [OC, units, kh, kw] channel slices).
template <typename TensorT, typename Fn>
void for_each_v_weight(TensorT& t, std::size_t unit, Fn&& fn) {
  if (t.rank() == 2) {
    const std::size_t rows = t.dim(0), cols = t.dim(1);
    double* base = const_cast<double*>(t.data());
    for (std::size_t r = 0; r < rows; ++r) fn(base[r * cols + unit]);
  } else {
    const std::size_t oc = t.dim(0), units = t.dim(1), window = t.dim(2) * t.dim(3);
    double* base = const_cast<double*>(t.data());
    for (std::size_t r = 0; r < oc; ++r) {
      double* blockPtr = base + (r * units + unit) * window;
      for (std::size_t j = 0; j < window; ++j) fn(blockPtr[j]);
    }
  }
}

}  // namespace

std::vector<double> HomogeneousUnitView::gather_w(const std::vector<Tensor>& weights,
                                                  const std::vector<Tensor>& biases) const {
  const UnitGroup& g = group_info();
  std::vector<double> out;
  for_each_w_weight(weights[g.input_layer], unit_, [&](double x) { out.push_back(x); });
  if (scheme_->include_bias_in_unit && biases[g.input_layer].size() > 0) {
    out.push_back(biases[g.input_layer][unit_]);
  }
  return out;
}

std::vector<double> HomogeneousUnitView::gather_v(const std::vector<Tensor>& weights) const {
  const UnitGroup& g = group_info();
  std::vector<double> out;
  for_each_v_weight(weights[g.output_layer], unit_, [&](double x) { out.push_back(x); });
  return out;
}

void HomogeneousUnitView::scatter_w(std::vector<Tensor>& weights, std::vector<Tensor>& biases,
                                    std::span<const double> values) const {
  const UnitGroup& g = group_info();
  const bool with_bias = scheme_->include_bias_in_unit && biases[g.input_layer].size() > 0;
  const std::size_t expect =
      weights[g.input_layer].size() / weights[g.input_layer].dim(0) + (with_bias ? 1 : 0);
  if (values.size() != expect) {
    throw DimensionError("unit view: scatter_w got " + std::to_string(values.size()) +
                         " values, expected " + std::to_string(expect));
  }
  std::size_t i = 0;
  for_each_w_weight(weights[g.input_layer], unit_, [&](double& x) { x = values[i++]; });
  if (with_bias) biases[g.input_layer][unit_] = values[i];
}

void HomogeneousUnitView::scatter_v(std::vector<Tensor>& weights,
                                    std::span<const double> values) const {
  const UnitGroup& g = group_info();
  const Tensor& t = weights[g.output_layer];
  const std::size_t expect =
      t.rank() == 2 ? t.dim(0) : t.dim(0) * t.dim(2) * t.dim(3);
  if (values.size() != expect) {
    throw DimensionError("unit view: scatter_v got " + std::to_string(values.size()) +
                         " values, expected " + std::to_string(expect));
  }
  std::size_t i = 0;
  for_each_v_weight(weights[g.output_layer], unit_, [&](double& x) { x = values[i++]; });
}

void HomogeneousUnitView::scale_w(std::vector<Tensor>& weights, std::vector<Tensor>& biases,
                                  double factor) const {
  const UnitGroup& g = group_info();
  for_each_w_weight(weights[g.input_layer], unit_, [&](double& x) { x *= factor; });
  // The bias rides the unit's positive homogeneity, so it must scale with w
  // even when it is excluded from the penalized coordinates. Otherwise
  // rescaling would change the computed function.
  if (biases[g.input_layer].size() > 0) {
    biases[g.input_layer][unit_] *= factor;
  }
}

void HomogeneousUnitView::scale_v(std::vector<Tensor>& weights, double factor) const {
  const UnitGroup& g = group_info();
  for_each_v_weight(weights[g.output_layer], unit_, [&](double& x) { x *= factor; });
}

double HomogeneousUnitView::w_norm(const std::vector<Tensor>& weights,
                                   const std::vector<Tensor>& biases) const {
  const UnitGroup& g = group_info();
  double s = 0.0;
  for_each_w_weight(weights[g.input_layer], unit_, [&](double x) { s += x * x; });
  if (scheme_->include_bias_in_unit && biases[g.input_layer].size() > 0) {
    const double b = biases[g.input_layer][unit_];
    s += b * b;
  }
  return std::sqrt(s);
}

double HomogeneousUnitView::v_norm(const std::vector<Tensor>& weights) const {
  const UnitGroup& g = group_info();
  double s = 0.0;
  for_each_v_weight(weights[g.output_layer], unit_, [&](double x) { s += x * x; });
  return std::sqrt(s);
}

bool HomogeneousUnitView::w_is_zero(const std::vector<Tensor>& weights,
                                    const std::vector<Tensor>& biases) const {
  const UnitGroup& g = group_info();
  bool zero = true;
  for_each_w_weight(weights[g.input_layer], unit_, [&](double x) { zero = zero && x == 0.0; });
  if (scheme_->include_bias_in_unit && biases[g.input_layer].size() > 0) {
    zero = zero && biases[g.input_layer][unit_] == 0.0;
  }
  return zero;
}

bool HomogeneousUnitView::v_is_zero(const std::vector<Tensor>& weights) const {
  const UnitGroup& g = group_info();
  bool zero = true;
  for_each_v_weight(weights[g.output_layer], unit_, [&](double x) { zero = zero && x == 0.0; });
  return zero;
}

std::vector<double> HomogeneousUnitView::w(const WeightStore& store) const {
  return gather_w(store.weights(), store.biases());
}

std::vector<double> HomogeneousUnitView::v(const WeightStore& store) const {
  return gather_v(store.weights());
}

void HomogeneousUnitView::set_w(WeightStore& store, std::span<const double> values) const {
  scatter_w(store.mutable_weights(), store.mutable_biases(), values);
}

void HomogeneousUnitView::set_v(WeightStore& store, std::span<const double> values) const {
  scatter_v(store.mutable_weights(), values);
}

double HomogeneousUnitView::w_norm(const WeightStore& store) const {
  return w_norm(store.weights(), store.biases());
}

double HomogeneousUnitView::v_norm(const WeightStore& store) const {
  return v_norm(store.weights());
}

}  // namespace pathprox
