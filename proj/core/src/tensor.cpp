#include "pathprox/tensor.hpp"

#include <cmath>
#include <utility>

#include "pathprox/errors.hpp"

namespace pathprox {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_product(shape_)) {
    throw DimensionError("tensor: " + std::to_string(data_.size()) +
                         " values do not fill shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, std::vector<double>{v}); }

double& Tensor::operator()(std::size_t i, std::size_t j) {
  if (rank() != 2) throw DimensionError("tensor: rank-2 access on shape " + shape_str());
  if (i >= shape_[0] || j >= shape_[1]) {
    throw IndexError("tensor: (" + std::to_string(i) + "," + std::to_string(j) +
                     ") out of range for shape " + shape_str());
  }
  return data_[i * shape_[1] + j];
}

double Tensor::operator()(std::size_t i, std::size_t j) const {
  return const_cast<Tensor&>(*this)(i, j);
}

double& Tensor::operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
  if (rank() != 4) throw DimensionError("tensor: rank-4 access on shape " + shape_str());
  if (i >= shape_[0] || j >= shape_[1] || k >= shape_[2] || l >= shape_[3]) {
    throw IndexError("tensor: 4-index access out of range for shape " + shape_str());
  }
  return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
}

double Tensor::operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
  return const_cast<Tensor&>(*this)(i, j, k, l);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str());
  }
  return shape_[axis];
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
  if (shape_product(new_shape) != size()) {
    throw DimensionError("tensor: cannot reshape " + shape_str() + " to " +
                         shape_to_string(new_shape));
  }
  return Tensor(std::move(new_shape), data_);
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

double l2_norm_squared(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(l2_norm_squared(v)); }

}  // namespace pathprox
