#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pathprox {

// Dense row-major f64 tensor. Rank 0 is a scalar holding one value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, double fill);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor scalar(double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  // Rank-checked multidimensional access for the common ranks.
  double& operator()(std::size_t i, std::size_t j);
  double operator()(std::size_t i, std::size_t j) const;
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l);
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const;

  std::size_t dim(std::size_t axis) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  Tensor reshaped(std::vector<std::size_t> new_shape) const;
  void fill(double v);
  bool all_finite() const;

  std::string shape_str() const;  // "[2,3]"

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

double l2_norm(std::span<const double> v);
double l2_norm_squared(std::span<const double> v);

}  // namespace pathprox
