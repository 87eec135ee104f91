#include "pathprox/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pathprox/errors.hpp"

namespace pathprox {

namespace {

void check_rank(const Tensor& t, std::size_t rank, const char* op, const char* role) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + role + " must have rank " +
                         std::to_string(rank) + ", got shape " + t.shape_str());
  }
}

struct ConvDims {
  std::size_t batch, c_in, h, w, c_out, kh, kw, out_h, out_w;
  std::size_t pad_top, pad_left;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, Padding padding) {
  check_rank(x, 4, "conv2d", "input");
  check_rank(k, 4, "conv2d", "kernel");
  ConvDims d{};
  d.batch = x.dim(0);
  d.c_in = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.c_out = k.dim(0);
  d.kh = k.dim(2);
  d.kw = k.dim(3);
  if (k.dim(1) != d.c_in) {
    throw DimensionError("conv2d: kernel " + k.shape_str() + " does not conform with input " +
                         x.shape_str() + " (channel mismatch)");
  }
  if (padding == Padding::kValid) {
    if (d.kh > d.h || d.kw > d.w) {
      throw DimensionError("conv2d: kernel " + k.shape_str() + " larger than input " +
                           x.shape_str() + " under valid padding");
    }
    d.out_h = d.h - d.kh + 1;
    d.out_w = d.w - d.kw + 1;
    d.pad_top = 0;
    d.pad_left = 0;
  } else {
    d.out_h = d.h;
    d.out_w = d.w;
    d.pad_top = (d.kh - 1) / 2;
    d.pad_left = (d.kw - 1) / 2;
  }
  return d;
}

}  // namespace

ValueId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<ValueId>(nodes_.size() - 1);
}

const Tape::Node& Tape::node(ValueId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw IndexError("tape: value id " + std::to_string(id) + " out of range");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

const Tensor& Tape::value(ValueId id) const { return node(id).value; }

ValueId Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

ValueId Tape::linear(ValueId x, ValueId weight, ValueId bias) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(weight);
  check_rank(xv, 2, "linear", "input");
  check_rank(wv, 2, "linear", "weight");
  const std::size_t batch = xv.dim(0), n_in = xv.dim(1), n_out = wv.dim(0);
  if (wv.dim(1) != n_in) {
    throw DimensionError("linear: input " + xv.shape_str() + " does not conform with weight " +
                         wv.shape_str());
  }
  const Tensor* bv = nullptr;
  if (bias != kNoValue) {
    bv = &value(bias);
    if (bv->rank() != 1 || bv->dim(0) != n_out) {
      throw DimensionError("linear: bias " + bv->shape_str() + " does not conform with weight " +
                           wv.shape_str());
    }
  }

  Tensor out({batch, n_out});
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xr = xv.data() + s * n_in;
    for (std::size_t i = 0; i < n_out; ++i) {
      const double* wr = wv.data() + i * n_in;
      double acc = bv ? (*bv)[i] : 0.0;
      for (std::size_t j = 0; j < n_in; ++j) acc += wr[j] * xr[j];
      out(s, i) = acc;
    }
  }

  Node n;
  n.op = Op::kLinear;
  n.a = x;
  n.b = weight;
  n.c = bias;
  n.value = std::move(out);
  return push(std::move(n));
}

ValueId Tape::relu(ValueId x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  Node n;
  n.op = Op::kRelu;
  n.a = x;
  n.value = std::move(out);
  return push(std::move(n));
}

ValueId Tape::conv2d(ValueId x, ValueId kernel, ValueId bias, Padding padding) {
  const Tensor& xv = value(x);
  const Tensor& kv = value(kernel);
  ConvDims d = conv_dims(xv, kv, padding);
  const Tensor* bv = nullptr;
  if (bias != kNoValue) {
    bv = &value(bias);
    if (bv->rank() != 1 || bv->dim(0) != d.c_out) {
      throw DimensionError("conv2d: bias " + bv->shape_str() + " does not conform with kernel " +
                           kv.shape_str());
    }
  }

  Tensor out({d.batch, d.c_out, d.out_h, d.out_w});
  for (std::size_t s = 0; s < d.batch; ++s) {
    for (std::size_t oc = 0; oc < d.c_out; ++oc) {
      const double base = bv ? (*bv)[oc] : 0.0;
      for (std::size_t oi = 0; oi < d.out_h; ++oi) {
        for (std::size_t oj = 0; oj < d.out_w; ++oj) {
          double acc = base;
          for (std::size_t ic = 0; ic < d.c_in; ++ic) {
            for (std::size_t a = 0; a < d.kh; ++a) {
              const std::size_t ii = oi + a;
              if (ii < d.pad_top || ii - d.pad_top >= d.h) continue;
              for (std::size_t b = 0; b < d.kw; ++b) {
                const std::size_t jj = oj + b;
                if (jj < d.pad_left || jj - d.pad_left >= d.w) continue;
                acc += kv(oc, ic, a, b) * xv(s, ic, ii - d.pad_top, jj - d.pad_left);
              }
            }
          }
          out(s, oc, oi, oj) = acc;
        }
      }
    }
  }

  Node n;
  n.op = Op::kConv2d;
  n.a = x;
  n.b = kernel;
  n.c = bias;
  n.padding = padding;
  n.value = std::move(out);
  return push(std::move(n));
}

ValueId Tape::pool2x2(ValueId x, PoolKind kind) {
  const Tensor& xv = value(x);
  check_rank(xv, 4, "pool2x2", "input");
  const std::size_t batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h < 2 || w < 2) {
    throw DimensionError("pool2x2: input " + xv.shape_str() + " has spatial dims smaller than 2");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({batch, ch, oh, ow});
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          const double v00 = xv(s, c, 2 * i, 2 * j);
          const double v01 = xv(s, c, 2 * i, 2 * j + 1);
          const double v10 = xv(s, c, 2 * i + 1, 2 * j);
          const double v11 = xv(s, c, 2 * i + 1, 2 * j + 1);
          out(s, c, i, j) = kind == PoolKind::kMax
                                ? std::max(std::max(v00, v01), std::max(v10, v11))
                                : 0.25 * (v00 + v01 + v10 + v11);
        }
      }
    }
  }
  Node n;
  n.op = Op::kPool2x2;
  n.a = x;
  n.pool = kind;
  n.value = std::move(out);
  return push(std::move(n));
}

ValueId Tape::flatten(ValueId x) {
  const Tensor& xv = value(x);
  if (xv.rank() < 2) {
    throw DimensionError("flatten: input " + xv.shape_str() + " needs a batch dimension");
  }
  const std::size_t batch = xv.dim(0);
  Node n;
  n.op = Op::kFlatten;
  n.a = x;
  n.value = xv.reshaped({batch, xv.size() / batch});
  return push(std::move(n));
}

ValueId Tape::sum(ValueId x) {
  const Tensor& xv = value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
  Node n;
  n.op = Op::kSum;
  n.a = x;
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

SoftmaxCrossEntropyResult Tape::softmax_cross_entropy(ValueId logits,
                                                      const std::vector<int>& labels) {
  const Tensor& lv = value(logits);
  check_rank(lv, 2, "softmax_cross_entropy", "logits");
  const std::size_t batch = lv.dim(0), classes = lv.dim(1);
  if (batch == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(batch));
  }

  Tensor probs({batch, classes});
  double loss = 0.0;
  for (std::size_t s = 0; s < batch; ++s) {
    const int y = labels[s];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " at row " +
                       std::to_string(s) + " outside [0," + std::to_string(classes) + ")");
    }
    double m = lv(s, 0);
    for (std::size_t k = 1; k < classes; ++k) m = std::max(m, lv(s, k));
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double e = std::exp(lv(s, k) - m);
      probs(s, k) = e;
      z += e;
    }
    for (std::size_t k = 0; k < classes; ++k) probs(s, k) /= z;
    // log-sum-exp form keeps the loss finite even when a probability underflows.
    loss -= (lv(s, static_cast<std::size_t>(y)) - m) - std::log(z);
  }
  loss /= static_cast<double>(batch);

  Node n;
  n.op = Op::kCrossEntropy;
  n.a = logits;
  n.value = Tensor::scalar(loss);
  n.saved = probs;
  n.labels = labels;
  ValueId id = push(std::move(n));
  return {id, std::move(probs)};
}

std::vector<Tensor> Tape::backward(ValueId root) const {
  const Tensor& rv = value(root);
  if (rv.size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + rv.shape_str());
  }
  return backward(root, Tensor::scalar(1.0));
}

std::vector<Tensor> Tape::backward(ValueId root, const Tensor& seed) const {
  const Node& rn = node(root);
  if (!seed.same_shape(rn.value)) {
    throw DimensionError("backward: seed shape " + seed.shape_str() +
                         " does not match root shape " + rn.value.shape_str());
  }

  std::vector<Tensor> grads(nodes_.size());
  auto touch = [&](ValueId id) -> Tensor& {
    Tensor& g = grads[static_cast<std::size_t>(id)];
    if (g.empty() && nodes_[static_cast<std::size_t>(id)].value.size() > 0) {
      g = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape());
    }
    return g;
  };
  touch(root) = seed;

  for (ValueId id = root; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) continue;

    switch (n.op) {
      case Op::kLeaf:
        break;

      case Op::kLinear: {
        const Tensor& xv = value(n.a);
        const Tensor& wv = value(n.b);
        const std::size_t batch = xv.dim(0), n_in = xv.dim(1), n_out = wv.dim(0);
        Tensor& gx = touch(n.a);
        Tensor& gw = touch(n.b);
        for (std::size_t s = 0; s < batch; ++s) {
          for (std::size_t i = 0; i < n_out; ++i) {
            const double gy = g(s, i);
            if (gy == 0.0) continue;
            const double* wr = wv.data() + i * n_in;
            const double* xr = xv.data() + s * n_in;
            double* gxr = gx.data() + s * n_in;
            double* gwr = gw.data() + i * n_in;
            for (std::size_t j = 0; j < n_in; ++j) {
              gxr[j] += gy * wr[j];
              gwr[j] += gy * xr[j];
            }
          }
        }
        if (n.c != kNoValue) {
          Tensor& gb = touch(n.c);
          for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t i = 0; i < n_out; ++i) gb[i] += g(s, i);
        }
        break;
      }

      case Op::kRelu: {
        const Tensor& xv = value(n.a);
        Tensor& gx = touch(n.a);
        for (std::size_t i = 0; i < xv.size(); ++i)
          if (xv[i] > 0.0) gx[i] += g[i];
        break;
      }

      case Op::kConv2d: {
        const Tensor& xv = value(n.a);
        const Tensor& kv = value(n.b);
        ConvDims d = conv_dims(xv, kv, n.padding);
        Tensor& gx = touch(n.a);
        Tensor& gk = touch(n.b);
        for (std::size_t s = 0; s < d.batch; ++s) {
          for (std::size_t oc = 0; oc < d.c_out; ++oc) {
            for (std::size_t oi = 0; oi < d.out_h; ++oi) {
              for (std::size_t oj = 0; oj < d.out_w; ++oj) {
                const double gy = g(s, oc, oi, oj);
                if (gy == 0.0) continue;
                for (std::size_t ic = 0; ic < d.c_in; ++ic) {
                  for (std::size_t a = 0; a < d.kh; ++a) {
                    const std::size_t ii = oi + a;
                    if (ii < d.pad_top || ii - d.pad_top >= d.h) continue;
                    for (std::size_t b = 0; b < d.kw; ++b) {
                      const std::size_t jj = oj + b;
                      if (jj < d.pad_left || jj - d.pad_left >= d.w) continue;
                      gk(oc, ic, a, b) += gy * xv(s, ic, ii - d.pad_top, jj - d.pad_left);
                      gx(s, ic, ii - d.pad_top, jj - d.pad_left) += gy * kv(oc, ic, a, b);
                    }
                  }
                }
              }
            }
          }
        }
        if (n.c != kNoValue) {
          Tensor& gb = touch(n.c);
          for (std::size_t s = 0; s < d.batch; ++s)
            for (std::size_t oc = 0; oc < d.c_out; ++oc)
              for (std::size_t oi = 0; oi < d.out_h; ++oi)
                for (std::size_t oj = 0; oj < d.out_w; ++oj) gb[oc] += g(s, oc, oi, oj);
        }
        break;
      }

      case Op::kPool2x2: {
        const Tensor& xv = value(n.a);
        Tensor& gx = touch(n.a);
        const std::size_t batch = xv.dim(0), ch = xv.dim(1);
        const std::size_t oh = n.value.dim(2), ow = n.value.dim(3);
        for (std::size_t s = 0; s < batch; ++s) {
          for (std::size_t c = 0; c < ch; ++c) {
            for (std::size_t i = 0; i < oh; ++i) {
              for (std::size_t j = 0; j < ow; ++j) {
                const double gy = g(s, c, i, j);
                if (gy == 0.0) continue;
                if (n.pool == PoolKind::kAvg) {
                  gx(s, c, 2 * i, 2 * j) += 0.25 * gy;
                  gx(s, c, 2 * i, 2 * j + 1) += 0.25 * gy;
                  gx(s, c, 2 * i + 1, 2 * j) += 0.25 * gy;
                  gx(s, c, 2 * i + 1, 2 * j + 1) += 0.25 * gy;
                } else {
                  // First strict maximum in row-major window order receives the
                  // gradient; matches the forward tie-breaking.
                  std::size_t bi = 2 * i, bj = 2 * j;
                  double best = xv(s, c, bi, bj);
                  for (std::size_t di = 0; di < 2; ++di) {
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                      const double v = xv(s, c, 2 * i + di, 2 * j + dj);
                      if (v > best) {
                        best = v;
                        bi = 2 * i + di;
                        bj = 2 * j + dj;
                      }
                    }
                  }
                  gx(s, c, bi, bj) += gy;
                }
              }
            }
          }
        }
        break;
      }

      case Op::kFlatten: {
        const Tensor& xv = value(n.a);
        Tensor& gx = touch(n.a);
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i];
        break;
      }

      case Op::kSum: {
        const Tensor& xv = value(n.a);
        Tensor& gx = touch(n.a);
        const double gy = g[0];
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += gy;
        break;
      }

      case Op::kCrossEntropy: {
        const Tensor& probs = n.saved;
        Tensor& gx = touch(n.a);
        const std::size_t batch = probs.dim(0), classes = probs.dim(1);
        const double gy = g[0] / static_cast<double>(batch);
        for (std::size_t s = 0; s < batch; ++s) {
          for (std::size_t k = 0; k < classes; ++k) {
            const double onehot = static_cast<std::size_t>(n.labels[s]) == k ? 1.0 : 0.0;
            gx(s, k) += gy * (probs(s, k) - onehot);
          }
        }
        break;
      }
    }
  }

  // Untouched nodes (no influence on the root) report zero gradients.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (grads[i].empty() && nodes_[i].value.size() > 0) grads[i] = Tensor(nodes_[i].value.shape());
  }
  return grads;
}

std::vector<Tensor> finite_difference_gradient(
    const std::function<double(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> params, double h) {
  if (!(h > 0.0)) throw ContractError("finite_difference_gradient: step h must be positive");
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const Tensor& p : params) grads.emplace_back(p.shape());
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double saved = params[t][i];
      params[t][i] = saved + h;
      const double fp = f(params);
      params[t][i] = saved - h;
      const double fm = f(params);
      params[t][i] = saved;
      grads[t][i] = (fp - fm) / (2.0 * h);
    }
  }
  return grads;
}

}  // namespace pathprox
