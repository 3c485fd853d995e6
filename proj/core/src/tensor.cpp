#include "fsq/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "fsq/error.hpp"
#include "fsq/rng.hpp"

namespace fsq {

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

void Shape::validate() const {
  if (dims_.empty() || dims_.size() > kMaxRank) {
    throw ShapeError("shape rank must be 1.." + std::to_string(kMaxRank) + ", got " +
                     std::to_string(dims_.size()));
  }
  std::size_t total = 1;
  for (std::size_t d : dims_) {
    if (d == 0) throw ShapeError("shape " + to_string() + " has a zero dimension");
    if (total > std::numeric_limits<std::size_t>::max() / d) {
      throw ShapeError("shape " + to_string() + " overflows the element count");
    }
    total *= d;
  }
}

std::size_t Shape::numel() const {
  if (dims_.empty()) return 0;
  std::size_t total = 1;
  for (std::size_t d : dims_) total *= d;
  return total;
}

std::string Shape::to_string() const {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out << ',';
    out << dims_[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {
  if (shape_.rank() == 0) throw ShapeError("tensor requires a shape of rank >= 1");
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_.rank() == 0) throw ShapeError("tensor requires a shape of rank >= 1");
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.to_string());
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != numel()) {
    throw ShapeError("cannot reshape " + shape_.to_string() + " to " + shape.to_string());
  }
  return Tensor(std::move(shape), data_);
}

Tensor tensor_new(const Shape& shape, float fill) { return Tensor(shape, fill); }

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().to_string() + " vs " +
                     b.shape().to_string());
  }
}

void check_finite(const Tensor& t, std::string_view what) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
  }
}

Tensor tensor_add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "tensor_add");
  Tensor out(a.shape(), 0.0f);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
  check_finite(out, "tensor_add");
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + a.shape().to_string() + " x " +
                     b.shape().to_string());
  }
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  Tensor out(Shape{m, n}, 0.0f);
  // i-p-j order: each out(i,j) still receives its k terms in ascending p.
  for (std::size_t i = 0; i < m; ++i) {
    float* row = out.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a.at(i, p);
      const float* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  check_finite(out, "matmul");
  return out;
}

Tensor he_init(const Shape& shape, std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw ConfigError("he_init: fan_in must be >= 1");
  Tensor out(shape, 0.0f);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Rng rng(seed);
  for (float& v : out.data()) v = static_cast<float>(rng.normal() * stddev);
  return out;
}

}  // namespace fsq
