#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pathprox/tape.hpp"
#include "pathprox/tensor.hpp"

namespace pathprox {

struct LinearLayer {
  std::size_t in = 0, out = 0;
  bool has_bias = true;
};

struct ConvLayer {
  std::size_t in_channels = 0, out_channels = 0, kh = 3, kw = 3;
  bool has_bias = true;
  Padding padding = Padding::kSame;
};

struct PoolLayer {
  PoolKind kind = PoolKind::kMax;
};

struct ReluLayer {};

using LayerDesc = std::variant<LinearLayer, ConvLayer, PoolLayer, ReluLayer>;

inline bool is_parameterized(const LayerDesc& d) {
  return std::holds_alternative<LinearLayer>(d) || std::holds_alternative<ConvLayer>(d);
}

// Architecture description. input_shape is {n} for flat inputs or {C,H,W} for
// images; a linear layer that receives a spatial activation flattens it first.
struct NetworkSpec {
  std::vector<LayerDesc> layers;
  std::vector<std::size_t> input_shape;
  std::size_t output_dim = 0;
  bool factorized = false;

  // Indices into `layers` of the parameterized (linear/conv) layers, in order.
  std::vector<std::size_t> parameter_layers() const;

  // Throws ConfigError naming the offending layer indices if adjacent layers do
  // not conform or the terminal layer is not a linear layer with output_dim outputs.
  void validate() const;
};

// Standard MLP: weight-matrix count L = d rounded up to even, dims
// input -> n -> ... -> n -> output, biases on, ReLU between consecutive layers.
// The factorized variant splits internal layers into bias-free factor pairs
// (first and last matrices act as the outer factors), yielding 2(L-1) matrices
// in L-1 coupled pairs with ReLU inside each pair and none between pairs.
NetworkSpec build_mlp(std::size_t depth, std::size_t width, std::size_t input_dim,
                      std::size_t output_dim, bool factorized = false);

struct ToyCnnOptions {
  std::vector<std::size_t> channels;  // {C_in, c1, c2, ...}; channels.size()-1 conv layers
  std::size_t kernel = 3;
  std::vector<std::size_t> pool_after;  // 1-based conv indices followed by a pooling layer
  PoolKind pool_kind = PoolKind::kMax;
  Padding padding = Padding::kSame;
  std::size_t input_h = 0, input_w = 0;
  std::size_t output_dim = 0;
  bool grouped = true;  // requires an even conv count
};

// Conv/ReLU/pool stack with a single linear classifier head.
NetworkSpec build_toy_cnn(const ToyCnnOptions& options);

// Owns per-layer parameter tensors. Weight layouts: linear [n_out, n_in]
// (row i = incoming weights of unit i), conv [C_out, C_in, kh, kw]. The version
// counter increments on every mutable access.
class WeightStore {
 public:
  WeightStore() = default;
  explicit WeightStore(const NetworkSpec& spec);

  std::size_t layer_count() const { return weights_.size(); }

  const std::vector<Tensor>& weights() const { return weights_; }
  const std::vector<Tensor>& biases() const { return biases_; }
  std::vector<Tensor>& mutable_weights();
  std::vector<Tensor>& mutable_biases();

  const Tensor& weight(std::size_t param_layer) const;
  const Tensor& bias(std::size_t param_layer) const;
  bool has_bias(std::size_t param_layer) const;

  std::uint64_t version() const { return version_; }
  void set_version(std::uint64_t v) { version_ = v; }

  bool all_finite() const;

 private:
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;  // empty tensor where a layer has no bias
  std::uint64_t version_ = 0;
};

// Kaiming fan-in normal init (std = sqrt(2/fan_in)), zero biases. The store is
// reallocated to match `spec`. Deterministic per (seed, layer index).
void init_weights(WeightStore& store, const NetworkSpec& spec, std::uint64_t seed);

// Logits for a batch; x: [batch, n] or [batch, C, H, W].
Tensor forward(const NetworkSpec& spec, const WeightStore& store, const Tensor& x);

// Forward pass recorded on a tape for gradient computation.
struct TrainingForward {
  Tape tape;
  ValueId input = kNoValue;
  ValueId logits = kNoValue;
  std::vector<ValueId> weight_ids;  // by parameter-layer ordinal
  std::vector<ValueId> bias_ids;    // kNoValue where absent
};

TrainingForward forward_training(const NetworkSpec& spec, const WeightStore& store,
                                 const Tensor& x);

// Mean cross-entropy and accuracy of the network on (x, labels).
struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};
EvalResult evaluate(const NetworkSpec& spec, const WeightStore& store, const Tensor& x,
                    const std::vector<int>& labels);

}  // namespace pathprox
