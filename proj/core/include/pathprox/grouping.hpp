#pragma once

#include <optional>
#include <vector>

#include "pathprox/network.hpp"

namespace pathprox {

// One coupled layer pair. Layer fields are parameter-layer ordinals (indices
// into WeightStore); spec_index fields locate the same layers in spec.layers.
struct UnitGroup {
  std::size_t input_layer = 0, output_layer = 0;
  std::size_t input_spec_index = 0, output_spec_index = 0;
  std::optional<std::size_t> pool_between;  // conv pairs may straddle one pooling layer
  std::size_t unit_count = 0;
};

// Partition of the parameterized layers into coupled pairs plus a residual set
// of unpaired layers that carry plain weight decay.
struct GroupingScheme {
  std::vector<UnitGroup> groups;
  std::vector<std::size_t> residual_layers;  // parameter-layer ordinals
  bool include_bias_in_unit = false;

  bool has_c_term() const { return !residual_layers.empty(); }
  std::size_t total_units() const;
};

// Pairs consecutive parameterized layers: linear with linear (ReLU between),
// conv with conv (ReLU and at most one pooling layer between). Anything that
// cannot pair joins the residual set. Always succeeds; degenerate networks
// yield empty groups.
GroupingScheme derive_grouping(const NetworkSpec& spec, bool include_bias_in_unit = false);

// Read/write access to one unit's incoming weight vector w (a row of the
// group's input layer, optionally with its bias coordinate appended) and
// outgoing vector v (a column of the output layer; for conv layers both are
// vectorized filter stacks). The array overloads work on any per-layer tensor
// collection with store layouts, so gradients can be sliced the same way.
class HomogeneousUnitView {
 public:
  HomogeneousUnitView(const GroupingScheme& scheme, std::size_t group, std::size_t unit);

  std::size_t group() const { return group_; }
  std::size_t unit() const { return unit_; }
  const UnitGroup& group_info() const;

  std::vector<double> gather_w(const std::vector<Tensor>& weights,
                               const std::vector<Tensor>& biases) const;
  std::vector<double> gather_v(const std::vector<Tensor>& weights) const;
  void scatter_w(std::vector<Tensor>& weights, std::vector<Tensor>& biases,
                 std::span<const double> values) const;
  void scatter_v(std::vector<Tensor>& weights, std::span<const double> values) const;
  // scale_w/scale_v rescale in function space: scale_w always carries the
  // unit's bias along (if the layer has one), independent of whether the bias
  // is part of the penalized coordinates, so scale_w(a) + scale_v(1/a) leaves
  // the network function unchanged.
  void scale_w(std::vector<Tensor>& weights, std::vector<Tensor>& biases, double factor) const;
  void scale_v(std::vector<Tensor>& weights, double factor) const;
  double w_norm(const std::vector<Tensor>& weights, const std::vector<Tensor>& biases) const;
  double v_norm(const std::vector<Tensor>& weights) const;
  bool w_is_zero(const std::vector<Tensor>& weights, const std::vector<Tensor>& biases) const;
  bool v_is_zero(const std::vector<Tensor>& weights) const;

  std::vector<double> w(const WeightStore& store) const;
  std::vector<double> v(const WeightStore& store) const;
  void set_w(WeightStore& store, std::span<const double> values) const;
  void set_v(WeightStore& store, std::span<const double> values) const;
  double w_norm(const WeightStore& store) const;
  double v_norm(const WeightStore& store) const;

 private:
  const GroupingScheme* scheme_;
  std::size_t group_, unit_;
};

}  // namespace pathprox
