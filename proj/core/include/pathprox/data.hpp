#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pathprox/tensor.hpp"

namespace pathprox {

// Supervised classification data. Features are [N, ...] with one example per
// leading-axis row; labels hold class ids in [0, num_classes).
struct Dataset {
  Tensor features;
  std::vector<int> labels;
  int num_classes = 0;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
};

struct Batch {
  Tensor features;
  std::vector<int> labels;
};

// Reads an IDX image/label file pair (the big-endian u8 format used for MNIST
// style corpora). Pixels land in [0, 1] as value/255. Malformed input raises
// FormatError carrying the byte offset of the problem.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Inverse of load_idx for rank-3 [N, rows, cols] features; each value is
// stored as round(v * 255) clamped to [0, 255].
void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path);

// Draws `per_class` examples of every class without replacement. Output rows
// are ordered by (class, draw order). ConfigError if any class runs short.
Dataset subsample_per_class(const Dataset& ds, std::size_t per_class, std::uint64_t seed);

struct SplitResult {
  Dataset train;
  Dataset val;
};

// Random split into N - val_size training and val_size validation examples.
// Both halves keep ascending original order, so the split is reproducible
// from (seed, val_size) alone.
SplitResult train_val_split(const Dataset& ds, std::size_t val_size, std::uint64_t seed);

// Two Gaussian blobs in the plane: class 0 at (+1, 0), class 1 at (-1, 0),
// isotropic stddev `noise`. round(outlier_fraction * n) points get their first
// coordinate sign-flipped, planting them inside the opposite class. Class 0
// takes ceil(n / 2) rows, class 1 the rest, in class order.
Dataset synthetic_two_class(std::size_t n, double noise, double outlier_fraction,
                            std::uint64_t seed);

// Global scalar statistics over every feature entry of the training set.
struct Normalization {
  double mean = 0.0;
  double stddev = 1.0;
};
Normalization compute_normalization(const Dataset& train);
void apply_normalization(Dataset& ds, const Normalization& norm);

// Reshapes each example to `input_shape` (product must match the per-example
// element count) so one stored corpus can feed models of either rank.
Dataset with_input_shape(const Dataset& ds, const std::vector<std::size_t>& input_shape);

// Copies the given rows into a standalone batch.
Batch take_batch(const Dataset& ds, const std::vector<std::size_t>& rows);

// Stateless mini-batch addressing: batch_for(t) depends only on (seed, t), so
// training can resume mid-run without replaying iterations. Each epoch uses an
// independent derived shuffle; a final partial batch is kept. batch_size of 0
// or >= N means full-batch in natural order.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed);

  Batch batch_for(std::size_t iteration) const;  // iterations count from 1
  std::size_t batches_per_epoch() const;
  bool full_batch() const;

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

}  // namespace pathprox
