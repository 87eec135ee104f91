#include "pathprox/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pathprox/errors.hpp"
#include "pathprox/random.hpp"

namespace pathprox {

namespace {

// Propagates an unbatched activation shape through one layer, throwing
// ConfigError with the layer index on any mismatch.
std::vector<std::size_t> apply_layer_shape(const LayerDesc& desc, std::vector<std::size_t> shape,
                                           std::size_t layer_index) {
  auto fail = [&](const std::string& why) {
    throw ConfigError("layer " + std::to_string(layer_index) + ": " + why +
                      " (incoming activation " + shape_to_string(shape) + ")");
  };
  if (const auto* lin = std::get_if<LinearLayer>(&desc)) {
    const std::size_t flat = shape_product(shape);
    if (flat != lin->in) fail("linear layer expects " + std::to_string(lin->in) + " inputs");
    return {lin->out};
  }
  if (const auto* conv = std::get_if<ConvLayer>(&desc)) {
    if (shape.size() != 3) fail("conv layer expects a [C,H,W] activation");
    if (shape[0] != conv->in_channels)
      fail("conv layer expects " + std::to_string(conv->in_channels) + " channels");
    if (conv->padding == Padding::kValid) {
      if (conv->kh > shape[1] || conv->kw > shape[2]) fail("kernel larger than activation");
      return {conv->out_channels, shape[1] - conv->kh + 1, shape[2] - conv->kw + 1};
    }
    return {conv->out_channels, shape[1], shape[2]};
  }
  if (std::holds_alternative<PoolLayer>(desc)) {
    if (shape.size() != 3) fail("pooling expects a [C,H,W] activation");
    if (shape[1] < 2 || shape[2] < 2) fail("pooling needs spatial dims of at least 2");
    return {shape[0], shape[1] / 2, shape[2] / 2};
  }
  return shape;  // relu
}

}  // namespace

std::vector<std::size_t> NetworkSpec::parameter_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (is_parameterized(layers[i])) idx.push_back(i);
  return idx;
}

void NetworkSpec::validate() const {
  if (input_shape.size() != 1 && input_shape.size() != 3) {
    throw ConfigError("network: input shape must be [n] or [C,H,W], got " +
                      shape_to_string(input_shape));
  }
  if (output_dim == 0) throw ConfigError("network: output dimension must be positive");
  if (layers.empty() || !std::holds_alternative<LinearLayer>(layers.back())) {
    throw ConfigError("network: the terminal layer must be a linear layer");
  }
  std::vector<std::size_t> shape = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) shape = apply_layer_shape(layers[i], shape, i);
  if (shape.size() != 1 || shape[0] != output_dim) {
    throw ConfigError("network: terminal linear layer produces " + shape_to_string(shape) +
                      ", expected [" + std::to_string(output_dim) + "]");
  }
}

NetworkSpec build_mlp(std::size_t depth, std::size_t width, std::size_t input_dim,
                      std::size_t output_dim, bool factorized) {
  if (depth < 2) throw ConfigError("build_mlp: depth must be at least 2");
  if (width == 0 || input_dim == 0 || output_dim == 0) {
    throw ConfigError("build_mlp: width, input_dim, and output_dim must be positive");
  }
  const std::size_t L = depth + (depth % 2);  // even matrix count so layers pair up

  NetworkSpec spec;
  spec.input_shape = {input_dim};
  spec.output_dim = output_dim;
  spec.factorized = factorized;

  if (!factorized) {
    for (std::size_t k = 0; k < L; ++k) {
      const std::size_t in = k == 0 ? input_dim : width;
      const std::size_t out = k == L - 1 ? output_dim : width;
      spec.layers.push_back(LinearLayer{in, out, true});
      if (k + 1 < L) spec.layers.push_back(ReluLayer{});
    }
  } else {
    // L-1 bias-free factor pairs with the activation inside each pair.
    for (std::size_t pair = 0; pair + 1 < L; ++pair) {
      const std::size_t in = pair == 0 ? input_dim : width;
      const std::size_t out = pair == L - 2 ? output_dim : width;
      spec.layers.push_back(LinearLayer{in, width, false});
      spec.layers.push_back(ReluLayer{});
      spec.layers.push_back(LinearLayer{width, out, false});
    }
  }
  spec.validate();
  return spec;
}

NetworkSpec build_toy_cnn(const ToyCnnOptions& options) {
  if (options.channels.empty()) throw ConfigError("build_toy_cnn: channel list must start with C_in");
  if (options.kernel == 0) throw ConfigError("build_toy_cnn: kernel size must be positive");
  if (options.input_h == 0 || options.input_w == 0 || options.output_dim == 0) {
    throw ConfigError("build_toy_cnn: input dims and output_dim must be positive");
  }
  const std::size_t conv_count = options.channels.size() - 1;
  if (options.grouped && conv_count % 2 != 0) {
    throw ConfigError("build_toy_cnn: grouped networks need an even conv count, got " +
                      std::to_string(conv_count));
  }
  for (std::size_t p : options.pool_after) {
    if (p == 0 || p > conv_count) {
      throw ConfigError("build_toy_cnn: pool position " + std::to_string(p) +
                        " outside conv range [1," + std::to_string(conv_count) + "]");
    }
  }

  NetworkSpec spec;
  spec.input_shape = {options.channels[0], options.input_h, options.input_w};
  spec.output_dim = options.output_dim;

  std::vector<std::size_t> shape = spec.input_shape;
  for (std::size_t k = 1; k <= conv_count; ++k) {
    ConvLayer conv{options.channels[k - 1], options.channels[k], options.kernel, options.kernel,
                   true, options.padding};
    spec.layers.push_back(conv);
    shape = apply_layer_shape(spec.layers.back(), shape, spec.layers.size() - 1);
    spec.layers.push_back(ReluLayer{});
    if (std::find(options.pool_after.begin(), options.pool_after.end(), k) !=
        options.pool_after.end()) {
      spec.layers.push_back(PoolLayer{options.pool_kind});
      shape = apply_layer_shape(spec.layers.back(), shape, spec.layers.size() - 1);
    }
  }
  spec.layers.push_back(LinearLayer{shape_product(shape), options.output_dim, true});
  spec.validate();
  return spec;
}

WeightStore::WeightStore(const NetworkSpec& spec) {
  for (std::size_t idx : spec.parameter_layers()) {
    const LayerDesc& d = spec.layers[idx];
    if (const auto* lin = std::get_if<LinearLayer>(&d)) {
      weights_.emplace_back(std::vector<std::size_t>{lin->out, lin->in});
      biases_.emplace_back(lin->has_bias ? Tensor({lin->out}) : Tensor());
    } else {
      const auto& conv = std::get<ConvLayer>(d);
      weights_.emplace_back(
          std::vector<std::size_t>{conv.out_channels, conv.in_channels, conv.kh, conv.kw});
      biases_.emplace_back(conv.has_bias ? Tensor({conv.out_channels}) : Tensor());
    }
  }
}

std::vector<Tensor>& WeightStore::mutable_weights() {
  ++version_;
  return weights_;
}

std::vector<Tensor>& WeightStore::mutable_biases() {
  ++version_;
  return biases_;
}

const Tensor& WeightStore::weight(std::size_t param_layer) const {
  if (param_layer >= weights_.size()) {
    throw IndexError("weight store: layer " + std::to_string(param_layer) + " out of range");
  }
  return weights_[param_layer];
}

const Tensor& WeightStore::bias(std::size_t param_layer) const {
  if (param_layer >= biases_.size()) {
    throw IndexError("weight store: layer " + std::to_string(param_layer) + " out of range");
  }
  return biases_[param_layer];
}

bool WeightStore::has_bias(std::size_t param_layer) const {
  return bias(param_layer).size() > 0;
}

bool WeightStore::all_finite() const {
  for (const Tensor& w : weights_)
    if (!w.all_finite()) return false;
  for (const Tensor& b : biases_)
    if (!b.all_finite()) return false;
  return true;
}

void init_weights(WeightStore& store, const NetworkSpec& spec, std::uint64_t seed) {
  store = WeightStore(spec);
  auto param_layers = spec.parameter_layers();
  auto& weights = store.mutable_weights();
  auto& biases = store.mutable_biases();
  for (std::size_t k = 0; k < param_layers.size(); ++k) {
    const LayerDesc& d = spec.layers[param_layers[k]];
    std::size_t fan_in;
    if (const auto* lin = std::get_if<LinearLayer>(&d)) {
      fan_in = lin->in;
    } else {
      const auto& conv = std::get<ConvLayer>(d);
      fan_in = conv.in_channels * conv.kh * conv.kw;
    }
    auto rng = make_rng(seed, (static_cast<std::uint64_t>(k) << 8) | rng_stream::kInit);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& w : weights[k].values()) w = dist(rng);
    biases[k].fill(0.0);
  }
}

namespace {

TrainingForward run_forward(const NetworkSpec& spec, const WeightStore& store, const Tensor& x) {
  if (x.rank() != spec.input_shape.size() + 1) {
    throw DimensionError("forward: input " + x.shape_str() + " does not match batched " +
                         shape_to_string(spec.input_shape));
  }
  for (std::size_t i = 0; i < spec.input_shape.size(); ++i) {
    if (x.dim(i + 1) != spec.input_shape[i]) {
      throw DimensionError("forward: input " + x.shape_str() + " does not match batched " +
                           shape_to_string(spec.input_shape));
    }
  }
  if (store.layer_count() != spec.parameter_layers().size()) {
    throw DimensionError("forward: store holds " + std::to_string(store.layer_count()) +
                         " layers for a spec with " +
                         std::to_string(spec.parameter_layers().size()));
  }

  TrainingForward fw;
  fw.input = fw.tape.leaf(x);
  ValueId cur = fw.input;
  std::size_t ordinal = 0;
  for (const LayerDesc& d : spec.layers) {
    if (const auto* lin = std::get_if<LinearLayer>(&d)) {
      (void)lin;
      if (fw.tape.value(cur).rank() == 4) cur = fw.tape.flatten(cur);
      ValueId w = fw.tape.leaf(store.weight(ordinal));
      ValueId b = store.has_bias(ordinal) ? fw.tape.leaf(store.bias(ordinal)) : kNoValue;
      fw.weight_ids.push_back(w);
      fw.bias_ids.push_back(b);
      cur = fw.tape.linear(cur, w, b);
      ++ordinal;
    } else if (const auto* conv = std::get_if<ConvLayer>(&d)) {
      ValueId w = fw.tape.leaf(store.weight(ordinal));
      ValueId b = store.has_bias(ordinal) ? fw.tape.leaf(store.bias(ordinal)) : kNoValue;
      fw.weight_ids.push_back(w);
      fw.bias_ids.push_back(b);
      cur = fw.tape.conv2d(cur, w, b, conv->padding);
      ++ordinal;
    } else if (const auto* pool = std::get_if<PoolLayer>(&d)) {
      cur = fw.tape.pool2x2(cur, pool->kind);
    } else {
      cur = fw.tape.relu(cur);
    }
  }
  fw.logits = cur;
  return fw;
}

}  // namespace

Tensor forward(const NetworkSpec& spec, const WeightStore& store, const Tensor& x) {
  TrainingForward fw = run_forward(spec, store, x);
  return fw.tape.value(fw.logits);
}

TrainingForward forward_training(const NetworkSpec& spec, const WeightStore& store,
                                 const Tensor& x) {
  return run_forward(spec, store, x);
}

EvalResult evaluate(const NetworkSpec& spec, const WeightStore& store, const Tensor& x,
                    const std::vector<int>& labels) {
  TrainingForward fw = run_forward(spec, store, x);
  auto ce = fw.tape.softmax_cross_entropy(fw.logits, labels);
  const Tensor& logits = fw.tape.value(fw.logits);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t s = 0; s < batch; ++s) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k)
      if (logits(s, k) > logits(s, best)) best = k;
    if (static_cast<std::size_t>(labels[s]) == best) ++correct;
  }
  return {fw.tape.value(ce.loss)[0], static_cast<double>(correct) / static_cast<double>(batch)};
}

}  // namespace pathprox
