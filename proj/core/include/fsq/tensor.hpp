#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fsq {

/// Tensor dimensions, outermost first. Images are laid out [N, C, H, W].
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  /// Rank-0 placeholder; not a valid tensor shape.
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t numel() const;

  std::string to_string() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  void validate() const;

  std::vector<std::size_t> dims_;
};

/// Dense row-major float32 tensor.
class Tensor {
 public:
  /// Empty placeholder (rank 0, no elements).
  Tensor() = default;
  Tensor(Shape shape, float fill);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Element access for rank-2 tensors.
  float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Element access for rank-4 [N, C, H, W] tensors.
  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same data under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

Tensor tensor_new(const Shape& shape, float fill);

/// Elementwise sum. Throws ShapeError on mismatch, NumericError on overflow.
Tensor tensor_add(const Tensor& a, const Tensor& b);

/// [m,k] x [k,n] -> [m,n]. Each output accumulates over k in ascending order.
Tensor matmul(const Tensor& a, const Tensor& b);

/// He-normal initializer: N(0, sqrt(2 / fan_in)), a pure function of its
/// arguments.
Tensor he_init(const Shape& shape, std::size_t fan_in, std::uint64_t seed);

/// Throws NumericError naming `what` if any element is NaN or infinite.
void check_finite(const Tensor& t, std::string_view what);

/// Throws ShapeError unless a.shape() == b.shape().
void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what);

}  // namespace fsq
