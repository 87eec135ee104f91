#include "pathprox/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "pathprox/errors.hpp"

namespace pathprox {

namespace {

using nlohmann::json;

constexpr const char* kFormatTag = "pathprox-checkpoint";
constexpr int kFormatVersion = 1;

json layer_to_json(const LayerDesc& desc) {
  json j;
  if (const auto* lin = std::get_if<LinearLayer>(&desc)) {
    j["type"] = "linear";
    j["in"] = lin->in;
    j["out"] = lin->out;
    j["bias"] = lin->has_bias;
  } else if (const auto* conv = std::get_if<ConvLayer>(&desc)) {
    j["type"] = "conv";
    j["in_channels"] = conv->in_channels;
    j["out_channels"] = conv->out_channels;
    j["kh"] = conv->kh;
    j["kw"] = conv->kw;
    j["bias"] = conv->has_bias;
    j["padding"] = conv->padding == Padding::kSame ? "same" : "valid";
  } else if (const auto* pool = std::get_if<PoolLayer>(&desc)) {
    j["type"] = "pool";
    j["kind"] = pool->kind == PoolKind::kMax ? "max" : "avg";
  } else {
    j["type"] = "relu";
  }
  return j;
}

json spec_to_json(const NetworkSpec& spec) {
  json j;
  j["input_shape"] = spec.input_shape;
  j["output_dim"] = spec.output_dim;
  j["factorized"] = spec.factorized;
  json layers = json::array();
  for (const LayerDesc& d : spec.layers) layers.push_back(layer_to_json(d));
  j["layers"] = std::move(layers);
  return j;
}

// Nested arrays mirroring the tensor rank, e.g. rank 2 -> array of rows.
json tensor_to_json(const Tensor& t, std::size_t axis, std::size_t& offset) {
  if (axis == t.rank()) return json(t[offset++]);
  json arr = json::array();
  for (std::size_t i = 0; i < t.dim(axis); ++i) arr.push_back(tensor_to_json(t, axis + 1, offset));
  return arr;
}

json tensor_to_json(const Tensor& t) {
  std::size_t offset = 0;
  return tensor_to_json(t, 0, offset);
}

void flatten_json_into(const json& j, std::vector<double>& out,
                       std::vector<std::size_t>& shape, std::size_t depth) {
  if (j.is_array()) {
    if (depth == shape.size()) {
      shape.push_back(j.size());
    } else if (shape[depth] != j.size()) {
      throw FormatError("checkpoint: ragged tensor array");
    }
    for (const json& c : j) flatten_json_into(c, out, shape, depth + 1);
  } else if (j.is_number()) {
    if (depth != shape.size()) throw FormatError("checkpoint: tensor array depth mismatch");
    out.push_back(j.get<double>());
  } else {
    throw FormatError("checkpoint: tensor arrays must hold numbers");
  }
}

Tensor tensor_from_json(const json& j) {
  std::vector<double> values;
  std::vector<std::size_t> shape;
  flatten_json_into(j, values, shape, 0);
  return Tensor(shape, values);
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkSpec& spec, const WeightStore& store,
                     std::uint64_t seed, const TrainingState* training) {
  if (!store.all_finite()) {
    throw ContractError("save_checkpoint: refusing to write non-finite weights");
  }
  json j;
  j["format"] = kFormatTag;
  j["format_version"] = kFormatVersion;
  j["seed"] = seed;
  j["store_version"] = store.version();
  j["spec"] = spec_to_json(spec);

  json layers = json::array();
  for (std::size_t k = 0; k < store.layer_count(); ++k) {
    json layer;
    layer["weight"] = tensor_to_json(store.weights()[k]);
    if (store.biases()[k].size() > 0) {
      layer["bias"] = tensor_to_json(store.biases()[k]);
    } else {
      layer["bias"] = nullptr;
    }
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);

  if (training) {
    json t;
    t["iteration"] = training->iteration;
    json frozen = json::array();
    for (const auto& group : training->frozen) {
      json g = json::array();
      for (char f : group) g.push_back(f != 0 ? 1 : 0);
      frozen.push_back(std::move(g));
    }
    t["frozen"] = std::move(frozen);
    j["training"] = std::move(t);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << j.dump();
  out << '\n';
  if (!out) throw FormatError(path + ": short write");
}

Checkpoint load_checkpoint(const std::string& path, const NetworkSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what(), static_cast<long long>(e.byte));
  }

  if (!j.is_object() || j.value("format", "") != kFormatTag) {
    throw FormatError(path + ": not a checkpoint file");
  }
  if (j.value("format_version", 0) != kFormatVersion) {
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(j.value("format_version", 0)));
  }
  if (j["spec"] != spec_to_json(spec)) {
    throw ConfigError(path + ": checkpoint architecture does not match the requested model");
  }

  Checkpoint cp;
  cp.seed = j.value("seed", std::uint64_t{0});
  cp.store = WeightStore(spec);
  auto& weights = cp.store.mutable_weights();
  auto& biases = cp.store.mutable_biases();

  const json& layers = j.at("layers");
  if (!layers.is_array() || layers.size() != weights.size()) {
    throw FormatError(path + ": expected " + std::to_string(weights.size()) +
                      " parameter layers");
  }
  for (std::size_t k = 0; k < weights.size(); ++k) {
    Tensor w = tensor_from_json(layers[k].at("weight"));
    if (!w.same_shape(weights[k])) {
      throw DimensionError(path + ": layer " + std::to_string(k) + " weight shape " +
                           w.shape_str() + ", expected " + weights[k].shape_str());
    }
    weights[k] = std::move(w);
    const json& jb = layers[k].at("bias");
    if (jb.is_null()) {
      if (biases[k].size() > 0) {
        throw DimensionError(path + ": layer " + std::to_string(k) + " is missing its bias");
      }
    } else {
      Tensor b = tensor_from_json(jb);
      if (!b.same_shape(biases[k])) {
        throw DimensionError(path + ": layer " + std::to_string(k) + " bias shape " +
                             b.shape_str() + ", expected " + biases[k].shape_str());
      }
      biases[k] = std::move(b);
    }
  }
  cp.store.set_version(j.value("store_version", std::uint64_t{0}));

  if (j.contains("training")) {
    TrainingState ts;
    const json& t = j.at("training");
    ts.iteration = t.at("iteration").get<std::size_t>();
    for (const json& g : t.at("frozen")) {
      std::vector<char> group;
      for (const json& f : g) group.push_back(f.get<int>() != 0 ? 1 : 0);
      ts.frozen.push_back(std::move(group));
    }
    cp.training = std::move(ts);
  }
  return cp;
}

}  // namespace pathprox
