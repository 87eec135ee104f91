#include "pathprox/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "pathprox/errors.hpp"
#include "pathprox/random.hpp"

namespace pathprox {

namespace {

std::uint32_t read_u32_be(std::ifstream& in, const std::string& path) {
  unsigned char buf[4];
  const long long offset = static_cast<long long>(in.tellg());
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw FormatError(path + ": truncated while reading a 32-bit header field", offset);
  }
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_u32_be(std::ofstream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

constexpr std::uint32_t kImagesMagic = 0x00000803;  // u8 payload, 3 dimensions
constexpr std::uint32_t kLabelsMagic = 0x00000801;  // u8 payload, 1 dimension

std::size_t row_elements(const Dataset& ds) {
  return ds.size() == 0 ? 0 : ds.features.size() / ds.size();
}

// Copies rows (in the given order) into a fresh feature tensor.
Tensor gather_rows(const Tensor& features, std::size_t n_rows,
                   const std::vector<std::size_t>& rows) {
  std::vector<std::size_t> shape = features.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  const std::size_t block = n_rows == 0 ? 0 : features.size() / n_rows;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* src = features.data() + rows[r] * block;
    std::copy(src, src + block, out.data() + r * block);
  }
  return out;
}

Dataset gather_dataset(const Dataset& ds, const std::vector<std::size_t>& rows,
                       const std::string& provenance) {
  Dataset out;
  out.features = gather_rows(ds.features, ds.size(), rows);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(ds.labels[r]);
  out.num_classes = ds.num_classes;
  out.provenance = provenance;
  return out;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw FormatError(images_path + ": cannot open");
  const std::uint32_t magic = read_u32_be(images, images_path);
  if (magic != kImagesMagic) {
    char msg[160];
    std::snprintf(msg, sizeof msg, "%s: bad image magic 0x%08x, expected 0x%08x",
                  images_path.c_str(), magic, kImagesMagic);
    throw FormatError(msg, 0);
  }
  const std::uint32_t n = read_u32_be(images, images_path);
  const std::uint32_t rows = read_u32_be(images, images_path);
  const std::uint32_t cols = read_u32_be(images, images_path);
  if (rows == 0 || cols == 0) {
    throw FormatError(images_path + ": zero image dimensions in header", 8);
  }

  const std::size_t pixel_count = std::size_t(n) * rows * cols;
  std::vector<unsigned char> pixels(pixel_count);
  if (!images.read(reinterpret_cast<char*>(pixels.data()),
                   static_cast<std::streamsize>(pixel_count))) {
    const long long got = images.gcount();
    throw FormatError(images_path + ": truncated pixel payload", 16 + got);
  }

  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw FormatError(labels_path + ": cannot open");
  const std::uint32_t lmagic = read_u32_be(labels, labels_path);
  if (lmagic != kLabelsMagic) {
    char msg[160];
    std::snprintf(msg, sizeof msg, "%s: bad label magic 0x%08x, expected 0x%08x",
                  labels_path.c_str(), lmagic, kLabelsMagic);
    throw FormatError(msg, 0);
  }
  const std::uint32_t ln = read_u32_be(labels, labels_path);
  if (ln != n) {
    throw FormatError(labels_path + ": " + std::to_string(ln) + " labels for " +
                          std::to_string(n) + " images",
                      4);
  }
  std::vector<unsigned char> raw_labels(ln);
  if (!labels.read(reinterpret_cast<char*>(raw_labels.data()),
                   static_cast<std::streamsize>(ln))) {
    const long long got = labels.gcount();
    throw FormatError(labels_path + ": truncated label payload", 8 + got);
  }

  Dataset ds;
  ds.features = Tensor({n, rows, cols});
  for (std::size_t i = 0; i < pixel_count; ++i) {
    ds.features[i] = static_cast<double>(pixels[i]) / 255.0;
  }
  ds.labels.reserve(ln);
  int max_label = -1;
  for (unsigned char l : raw_labels) {
    ds.labels.push_back(static_cast<int>(l));
    max_label = std::max(max_label, static_cast<int>(l));
  }
  ds.num_classes = max_label + 1;
  ds.provenance = "idx:" + images_path;
  return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path) {
  if (ds.features.rank() != 3) {
    throw ContractError("write_idx: features must be [N, rows, cols], got shape " +
                        ds.features.shape_str());
  }
  if (ds.features.dim(0) != ds.size()) {
    throw ContractError("write_idx: feature row count does not match label count");
  }
  std::ofstream images(images_path, std::ios::binary);
  if (!images) throw FormatError(images_path + ": cannot open for writing");
  write_u32_be(images, kImagesMagic);
  write_u32_be(images, static_cast<std::uint32_t>(ds.features.dim(0)));
  write_u32_be(images, static_cast<std::uint32_t>(ds.features.dim(1)));
  write_u32_be(images, static_cast<std::uint32_t>(ds.features.dim(2)));
  std::vector<unsigned char> pixels(ds.features.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double scaled = std::llround(ds.features[i] * 255.0);
    pixels[i] = static_cast<unsigned char>(std::clamp(scaled, 0.0, 255.0));
  }
  images.write(reinterpret_cast<const char*>(pixels.data()),
               static_cast<std::streamsize>(pixels.size()));
  if (!images) throw FormatError(images_path + ": short write");

  std::ofstream labels(labels_path, std::ios::binary);
  if (!labels) throw FormatError(labels_path + ": cannot open for writing");
  write_u32_be(labels, kLabelsMagic);
  write_u32_be(labels, static_cast<std::uint32_t>(ds.labels.size()));
  std::vector<unsigned char> raw(ds.labels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (ds.labels[i] < 0 || ds.labels[i] > 255) {
      throw ContractError("write_idx: label " + std::to_string(ds.labels[i]) +
                          " does not fit in a byte");
    }
    raw[i] = static_cast<unsigned char>(ds.labels[i]);
  }
  labels.write(reinterpret_cast<const char*>(raw.data()),
               static_cast<std::streamsize>(raw.size()));
  if (!labels) throw FormatError(labels_path + ": short write");
}

Dataset subsample_per_class(const Dataset& ds, std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw ConfigError("subsample_per_class: per_class must be positive");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  auto rng = make_rng(seed, rng_stream::kSubsample);
  std::vector<std::size_t> picked;
  picked.reserve(per_class * by_class.size());
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& pool = by_class[c];
    if (pool.size() < per_class) {
      throw ConfigError("subsample_per_class: class " + std::to_string(c) + " has only " +
                        std::to_string(pool.size()) + " examples, need " +
                        std::to_string(per_class));
    }
    for (std::size_t k = 0; k < per_class; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng)]);
      picked.push_back(pool[k]);
    }
  }
  return gather_dataset(ds, picked,
                        ds.provenance + "|subsample(" + std::to_string(per_class) + "/class)");
}

SplitResult train_val_split(const Dataset& ds, std::size_t val_size, std::uint64_t seed) {
  if (val_size >= ds.size()) {
    throw ConfigError("train_val_split: val_size " + std::to_string(val_size) +
                      " leaves no training data (N = " + std::to_string(ds.size()) + ")");
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, rng_stream::kSplit);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> val_rows(order.begin(), order.begin() + val_size);
  std::vector<std::size_t> train_rows(order.begin() + val_size, order.end());
  std::sort(val_rows.begin(), val_rows.end());
  std::sort(train_rows.begin(), train_rows.end());
  SplitResult out;
  out.train = gather_dataset(ds, train_rows, ds.provenance + "|train");
  out.val = gather_dataset(ds, val_rows, ds.provenance + "|val");
  return out;
}

Dataset synthetic_two_class(std::size_t n, double noise, double outlier_fraction,
                            std::uint64_t seed) {
  if (n < 2) throw ConfigError("synthetic_two_class: need at least 2 points");
  if (noise < 0.0) throw ConfigError("synthetic_two_class: noise must be nonnegative");
  if (outlier_fraction < 0.0 || outlier_fraction > 1.0) {
    throw ConfigError("synthetic_two_class: outlier fraction must lie in [0, 1]");
  }
  const std::size_t n0 = n / 2 + n % 2;
  auto rng = make_rng(seed, rng_stream::kSynthetic);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Dataset ds;
  ds.features = Tensor({n, 2});
  ds.labels.resize(n);
  ds.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const bool first = i < n0;
    const double cx = first ? 1.0 : -1.0;
    double dx = 0.0, dy = 0.0;
    if (noise > 0.0) {
      dx = noise * gauss(rng);
      dy = noise * gauss(rng);
    }
    ds.features(i, 0) = cx + dx;
    ds.features(i, 1) = dy;
    ds.labels[i] = first ? 0 : 1;
  }

  const std::size_t n_out = static_cast<std::size_t>(std::llround(outlier_fraction * n));
  if (n_out > 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t k = 0; k < n_out; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, n - 1);
      std::swap(order[k], order[pick(rng)]);
      ds.features(order[k], 0) = -ds.features(order[k], 0);
    }
  }

  char tag[128];
  std::snprintf(tag, sizeof tag, "synthetic_two_class(n=%zu,noise=%g,outliers=%g,seed=%llu)", n,
                noise, outlier_fraction, static_cast<unsigned long long>(seed));
  ds.provenance = tag;
  return ds;
}

Normalization compute_normalization(const Dataset& train) {
  if (train.features.size() == 0) {
    throw DegenerateInputError("compute_normalization: empty training set");
  }
  double sum = 0.0;
  for (double v : train.features.values()) sum += v;
  const double mean = sum / static_cast<double>(train.features.size());
  double sq = 0.0;
  for (double v : train.features.values()) sq += (v - mean) * (v - mean);
  const double stddev = std::sqrt(sq / static_cast<double>(train.features.size()));
  if (stddev < 1e-12) {
    throw DegenerateInputError("compute_normalization: features are constant (stddev " +
                               std::to_string(stddev) + ")");
  }
  return Normalization{mean, stddev};
}

void apply_normalization(Dataset& ds, const Normalization& norm) {
  for (double& v : ds.features.values()) v = (v - norm.mean) / norm.stddev;
}

Dataset with_input_shape(const Dataset& ds, const std::vector<std::size_t>& input_shape) {
  const std::size_t per_row = row_elements(ds);
  const std::size_t want = shape_product(input_shape);
  if (per_row != want) {
    throw DimensionError("with_input_shape: examples have " + std::to_string(per_row) +
                         " values, target shape needs " + std::to_string(want));
  }
  std::vector<std::size_t> shape;
  shape.push_back(ds.size());
  shape.insert(shape.end(), input_shape.begin(), input_shape.end());
  Dataset out = ds;
  out.features = ds.features.reshaped(shape);
  return out;
}

Batch take_batch(const Dataset& ds, const std::vector<std::size_t>& rows) {
  for (std::size_t r : rows) {
    if (r >= ds.size()) {
      throw IndexError("take_batch: row " + std::to_string(r) + " out of range for " +
                       std::to_string(ds.size()) + " examples");
    }
  }
  Batch b;
  b.features = gather_rows(ds.features, ds.size(), rows);
  b.labels.reserve(rows.size());
  for (std::size_t r : rows) b.labels.push_back(ds.labels[r]);
  return b;
}

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), seed_(seed) {
  if (ds.size() == 0) throw ConfigError("BatchIterator: empty dataset");
}

bool BatchIterator::full_batch() const {
  return batch_size_ == 0 || batch_size_ >= ds_->size();
}

std::size_t BatchIterator::batches_per_epoch() const {
  if (full_batch()) return 1;
  return (ds_->size() + batch_size_ - 1) / batch_size_;
}

Batch BatchIterator::batch_for(std::size_t iteration) const {
  if (iteration == 0) throw ContractError("batch_for: iterations count from 1");
  const std::size_t n = ds_->size();
  if (full_batch()) {
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    return take_batch(*ds_, rows);
  }
  const std::size_t bpe = batches_per_epoch();
  const std::size_t epoch = (iteration - 1) / bpe;
  const std::size_t slot = (iteration - 1) % bpe;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed_, rng_stream::kShuffleBase + epoch);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t begin = slot * batch_size_;
  const std::size_t end = std::min(n, begin + batch_size_);
  return take_batch(*ds_, std::vector<std::size_t>(order.begin() + begin, order.begin() + end));
}

}  // namespace pathprox
