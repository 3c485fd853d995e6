#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>

#include "fsq/tensor.hpp"

namespace fsq {

struct ConvSpec {
  std::size_t out_channels = 1;
  std::size_t in_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  void validate() const;
  /// Output spatial size for an input of size in_h x in_w; throws ShapeError
  /// if either output dim would be < 1.
  std::pair<std::size_t, std::size_t> output_hw(std::size_t in_h, std::size_t in_w) const;
};

/// Gradients produced by a layer's backward pass. Each one has the shape of
/// the value it differentiates.
struct LayerGrads {
  Tensor d_input;
  std::optional<Tensor> d_weight;
  std::optional<Tensor> d_bias;
};

// Convolution is cross-correlation with zero padding. Each output element is
// accumulated from zero over (c, ky, kx) in ascending order; the bias is added
// last.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      const ConvSpec& spec);
LayerGrads conv2d_backward(const Tensor& input, const Tensor& weight, const ConvSpec& spec,
                           const Tensor& d_output);

Tensor relu(const Tensor& x);
/// `x` may be either the relu input or its output; both have the same sign mask.
Tensor relu_backward(const Tensor& x, const Tensor& d_output);

/// Max pooling with floor output dims and no padding.
Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
/// Routes each upstream gradient to the first maximal element (lowest flat
/// index) of its window.
Tensor maxpool2d_backward(const Tensor& x, std::size_t kernel, std::size_t stride,
                          const Tensor& d_output);

Tensor channel_concat(const Tensor& a, const Tensor& b);
/// Inverse of channel_concat: channels [0, first) and [first, C).
std::pair<Tensor, Tensor> channel_split(const Tensor& x, std::size_t first);

/// [N,C,H,W] -> [N,C] spatial mean.
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& d_output);

/// x[N,F] * w[F,U] + b[U].
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b);
LayerGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& d_output);

/// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& logits);

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by 1/(1-rate); the mask is a
/// pure function of (seed, element index). Identity when !training.
Tensor dropout(const Tensor& x, float rate, std::uint64_t seed, bool training);
Tensor dropout_backward(const Tensor& d_output, float rate, std::uint64_t seed, bool training);

}  // namespace fsq
