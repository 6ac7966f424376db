#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace abf {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array of doubles. The leading dimension is the batch
// dimension wherever a tensor carries more than one sample.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Batch views: row n of a tensor whose first dimension is the batch.
  std::size_t batch() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t sample_size() const;
  Shape sample_shape() const;
  std::span<double> row(std::size_t n);
  std::span<const double> row(std::size_t n) const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Stacks samples with identical shape along a new leading batch dimension.
Tensor stack_rows(const Tensor& source, std::span<const std::size_t> indices);
Tensor concat_batches(const Tensor& a, const Tensor& b);
Tensor with_batch(const Shape& sample_shape, std::size_t n, double fill = 0.0);

double l2_norm(std::span<const double> v);
double l2_distance(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace abf
