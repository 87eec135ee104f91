#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pathprox/tensor.hpp"

namespace pathprox {

enum class Padding { kValid, kSame };
enum class PoolKind { kMax, kAvg };

using ValueId = std::int32_t;
inline constexpr ValueId kNoValue = -1;

// Result of fusing softmax with cross-entropy: the scalar mean loss lives on
// the tape; the row-wise class probabilities are a plain byproduct.
struct SoftmaxCrossEntropyResult {
  ValueId loss;
  Tensor probabilities;  // [batch, classes]
};

// Append-only record of primitive tensor operations. Entries are topologically
// ordered by construction: every operand id precedes its consumer. One reverse
// sweep from a scalar root therefore yields the gradient of the root with
// respect to every recorded value.
class Tape {
 public:
  // Leaves are inputs and parameters; they participate in backward like any node.
  ValueId leaf(Tensor value);

  // y[s,i] = sum_j W[i,j] x[s,j] + b[i]; x: [batch, n_in], W: [n_out, n_in].
  ValueId linear(ValueId x, ValueId weight, ValueId bias = kNoValue);

  ValueId relu(ValueId x);

  // Stride-1 cross-correlation. x: [batch, C_in, H, W], k: [C_out, C_in, kh, kw].
  // kSame pads with zeros so spatial dims are preserved (floor-split padding).
  ValueId conv2d(ValueId x, ValueId kernel, ValueId bias, Padding padding);

  // 2x2 window, stride 2, trailing odd row/column dropped. Requires H, W >= 2.
  ValueId pool2x2(ValueId x, PoolKind kind);

  // [batch, ...] -> [batch, product of remaining dims].
  ValueId flatten(ValueId x);

  // Scalar sum of all entries.
  ValueId sum(ValueId x);

  // Mean negative log-likelihood with max-subtraction stabilization.
  // labels[s] must lie in [0, classes).
  SoftmaxCrossEntropyResult softmax_cross_entropy(ValueId logits,
                                                  const std::vector<int>& labels);

  const Tensor& value(ValueId id) const;
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the scalar root with respect to every node, indexed by ValueId.
  // Nodes that do not influence the root get zero tensors of their shape.
  std::vector<Tensor> backward(ValueId root) const;
  // Same with an explicit cotangent for a non-scalar root.
  std::vector<Tensor> backward(ValueId root, const Tensor& seed) const;

 private:
  enum class Op : std::uint8_t { kLeaf, kLinear, kRelu, kConv2d, kPool2x2, kFlatten, kSum, kCrossEntropy };

  struct Node {
    Op op = Op::kLeaf;
    ValueId a = kNoValue, b = kNoValue, c = kNoValue;
    Tensor value;
    Tensor saved;             // cross-entropy: probabilities
    std::vector<int> labels;  // cross-entropy
    Padding padding = Padding::kValid;
    PoolKind pool = PoolKind::kMax;
  };

  ValueId push(Node node);
  const Node& node(ValueId id) const;

  std::vector<Node> nodes_;
};

// Central-difference gradient of f with respect to every tensor in params.
// Used as an independent oracle against Tape::backward; deliberately shares no
// code with it.
std::vector<Tensor> finite_difference_gradient(
    const std::function<double(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> params, double h = 1e-5);

}  // namespace pathprox
