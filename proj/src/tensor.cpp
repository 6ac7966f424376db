#include "abf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "abf/error.hpp"

namespace abf {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(numel(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + to_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size())
    throw ShapeError("shape " + to_string(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " values");
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::sample_size() const {
  return shape_.empty() ? 0 : data_.size() / shape_[0];
}

Shape Tensor::sample_shape() const {
  return shape_.empty() ? Shape{} : Shape(shape_.begin() + 1, shape_.end());
}

std::span<double> Tensor::row(std::size_t n) {
  const auto s = sample_size();
  return std::span<double>(data_).subspan(n * s, s);
}

std::span<const double> Tensor::row(std::size_t n) const {
  const auto s = sample_size();
  return std::span<const double>(data_).subspan(n * s, s);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack_rows(const Tensor& source, std::span<const std::size_t> indices) {
  Shape shape = source.shape();
  shape[0] = indices.size();
  std::vector<double> data;
  data.reserve(indices.size() * source.sample_size());
  for (auto i : indices) {
    auto r = source.row(i);
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor concat_batches(const Tensor& a, const Tensor& b) {
  if (a.sample_shape() != b.sample_shape())
    throw ShapeError("cannot concatenate batches of " + to_string(a.sample_shape()) +
                     " and " + to_string(b.sample_shape()));
  Shape shape = a.shape();
  shape[0] += b.batch();
  std::vector<double> data(a.storage());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Tensor(std::move(shape), std::move(data));
}

Tensor with_batch(const Shape& sample_shape, std::size_t n, double fill) {
  Shape shape{n};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(shape), fill);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double l2_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace abf
