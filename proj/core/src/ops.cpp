#include "fsq/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fsq/error.hpp"
#include "fsq/parallel.hpp"
#include "fsq/rng.hpp"

namespace fsq {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.shape().rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     t.shape().to_string());
  }
}

}  // namespace

void ConvSpec::validate() const {
  if (out_channels < 1 || in_channels < 1) throw ShapeError("conv: channel counts must be >= 1");
  if (kernel_h < 1 || kernel_w < 1) throw ShapeError("conv: kernel dims must be >= 1");
  if (stride < 1) throw ShapeError("conv: stride must be >= 1");
}

std::pair<std::size_t, std::size_t> ConvSpec::output_hw(std::size_t in_h, std::size_t in_w) const {
  validate();
  const std::size_t padded_h = in_h + 2 * pad;
  const std::size_t padded_w = in_w + 2 * pad;
  if (padded_h < kernel_h || padded_w < kernel_w) {
    throw ShapeError("conv: kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                     " larger than padded input " + std::to_string(padded_h) + "x" +
                     std::to_string(padded_w));
  }
  return {(padded_h - kernel_h) / stride + 1, (padded_w - kernel_w) / stride + 1};
}

namespace {

void check_conv_shapes(const Tensor& input, const Tensor& weight, const ConvSpec& spec) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const Shape expected_w{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
  if (weight.shape() != expected_w) {
    throw ShapeError("conv2d: weight shape " + weight.shape().to_string() + ", expected " +
                     expected_w.to_string());
  }
  if (input.shape()[1] != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(input.shape()[1]) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      const ConvSpec& spec) {
  check_conv_shapes(input, weight, spec);
  if (bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError("conv2d: bias shape " + bias.shape().to_string());
  }
  const std::size_t n_batch = input.shape()[0];
  const std::size_t in_h = input.shape()[2];
  const std::size_t in_w = input.shape()[3];
  const auto [out_h, out_w] = spec.output_hw(in_h, in_w);
  const std::size_t kh = spec.kernel_h, kw = spec.kernel_w;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(spec.pad);
  const std::size_t stride = spec.stride;

  Tensor out(Shape{n_batch, spec.out_channels, out_h, out_w}, 0.0f);
  const float* in_data = input.data().data();
  const float* w_data = weight.data().data();
  float* out_data = out.data().data();

  // One task per (n, o) output plane. Inside a plane every element receives
  // its terms in (c, ky, kx) order, the same order as the naive loop nest.
  parallel_for(n_batch * spec.out_channels, [&](std::size_t task) {
    const std::size_t n = task / spec.out_channels;
    const std::size_t o = task % spec.out_channels;
    float* plane = out_data + task * out_h * out_w;
    for (std::size_t c = 0; c < spec.in_channels; ++c) {
      const float* in_plane = in_data + (n * spec.in_channels + c) * in_h * in_w;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const float wv = w_data[((o * spec.in_channels + c) * kh + ky) * kw + kx];
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
            float* out_row = plane + oy * out_w;
            // Padded taps are skipped; the running sum starts at +0 so
            // skipping a zero term never changes its bits.
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
            const float* in_row = in_plane + static_cast<std::size_t>(iy) * in_w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
              out_row[ox] += wv * in_row[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
    const float b = bias[o];
    for (std::size_t i = 0; i < out_h * out_w; ++i) plane[i] += b;
  });
  return out;
}

LayerGrads conv2d_backward(const Tensor& input, const Tensor& weight, const ConvSpec& spec,
                           const Tensor& d_output) {
  check_conv_shapes(input, weight, spec);
  const std::size_t n_batch = input.shape()[0];
  const std::size_t in_h = input.shape()[2];
  const std::size_t in_w = input.shape()[3];
  const auto [out_h, out_w] = spec.output_hw(in_h, in_w);
  const Shape expected{n_batch, spec.out_channels, out_h, out_w};
  if (d_output.shape() != expected) {
    throw ShapeError("conv2d_backward: d_output shape " + d_output.shape().to_string() +
                     ", expected " + expected.to_string());
  }
  const std::size_t kh = spec.kernel_h, kw = spec.kernel_w;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(spec.pad);
  const std::size_t stride = spec.stride;
  const std::size_t C = spec.in_channels, O = spec.out_channels;

  Tensor d_input(input.shape(), 0.0f);
  Tensor d_weight(weight.shape(), 0.0f);
  Tensor d_bias(Shape{O}, 0.0f);
  const float* in_data = input.data().data();
  const float* w_data = weight.data().data();
  const float* g_data = d_output.data().data();

  // Weight and bias gradients: one task per output channel, summing over
  // (n, oy, ox) in ascending order.
  parallel_for(O, [&](std::size_t o) {
    double bias_acc = 0.0;
    for (std::size_t n = 0; n < n_batch; ++n) {
      const float* g_plane = g_data + (n * O + o) * out_h * out_w;
      for (std::size_t i = 0; i < out_h * out_w; ++i) bias_acc += g_plane[i];
    }
    d_bias[o] = static_cast<float>(bias_acc);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          double acc = 0.0;
          for (std::size_t n = 0; n < n_batch; ++n) {
            const float* g_plane = g_data + (n * O + o) * out_h * out_w;
            const float* in_plane = in_data + (n * C + c) * in_h * in_w;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
              for (std::size_t ox = 0; ox < out_w; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
                acc += static_cast<double>(g_plane[oy * out_w + ox]) *
                       in_plane[static_cast<std::size_t>(iy) * in_w + static_cast<std::size_t>(ix)];
              }
            }
          }
          d_weight[((o * C + c) * kh + ky) * kw + kx] = static_cast<float>(acc);
        }
      }
    }
  });

  // Input gradient: one task per batch item, scattering in (o, ky, kx, oy, ox) order.
  parallel_for(n_batch, [&](std::size_t n) {
    float* d_in = d_input.data().data() + n * C * in_h * in_w;
    for (std::size_t o = 0; o < O; ++o) {
      const float* g_plane = g_data + (n * O + o) * out_h * out_w;
      for (std::size_t c = 0; c < C; ++c) {
        float* d_plane = d_in + c * in_h * in_w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const float wv = w_data[((o * C + c) * kh + ky) * kw + kx];
            for (std::size_t oy = 0; oy < out_h; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
              for (std::size_t ox = 0; ox < out_w; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
                d_plane[static_cast<std::size_t>(iy) * in_w + static_cast<std::size_t>(ix)] +=
                    wv * g_plane[oy * out_w + ox];
              }
            }
          }
        }
      }
    }
  });

  return {std::move(d_input), std::move(d_weight), std::move(d_bias)};
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& d_output) {
  require_same_shape(x, d_output, "relu_backward");
  Tensor out(x.shape(), 0.0f);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] > 0.0f ? d_output[i] : 0.0f;
  return out;
}

namespace {

std::pair<std::size_t, std::size_t> pool_output_hw(const Tensor& x, std::size_t kernel,
                                                   std::size_t stride) {
  require_rank(x, 4, "maxpool2d");
  if (kernel < 1 || stride < 1) throw ShapeError("maxpool2d: kernel and stride must be >= 1");
  const std::size_t h = x.shape()[2], w = x.shape()[3];
  if (kernel > h || kernel > w) {
    throw ShapeError("maxpool2d: window " + std::to_string(kernel) + " larger than input " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  return {(h - kernel) / stride + 1, (w - kernel) / stride + 1};
}

}  // namespace

Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  const auto [out_h, out_w] = pool_output_hw(x, kernel, stride);
  const std::size_t N = x.shape()[0], C = x.shape()[1];
  Tensor out(Shape{N, C, out_h, out_w}, 0.0f);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          float best = x.at(n, c, oy * stride, ox * stride);
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx) {
              best = std::max(best, x.at(n, c, oy * stride + ky, ox * stride + kx));
            }
          }
          out.at(n, c, oy, ox) = best;
        }
      }
    }
  }
  return out;
}

Tensor maxpool2d_backward(const Tensor& x, std::size_t kernel, std::size_t stride,
                          const Tensor& d_output) {
  const auto [out_h, out_w] = pool_output_hw(x, kernel, stride);
  const std::size_t N = x.shape()[0], C = x.shape()[1];
  if (d_output.shape() != Shape{N, C, out_h, out_w}) {
    throw ShapeError("maxpool2d_backward: d_output shape " + d_output.shape().to_string());
  }
  Tensor d_x(x.shape(), 0.0f);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          // Row-major scan with strict > keeps the lowest flat index on ties.
          std::size_t best_y = oy * stride, best_x = ox * stride;
          float best = x.at(n, c, best_y, best_x);
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx) {
              const float v = x.at(n, c, oy * stride + ky, ox * stride + kx);
              if (v > best) {
                best = v;
                best_y = oy * stride + ky;
                best_x = ox * stride + kx;
              }
            }
          }
          d_x.at(n, c, best_y, best_x) += d_output.at(n, c, oy, ox);
        }
      }
    }
  }
  return d_x;
}

Tensor channel_concat(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "channel_concat");
  require_rank(b, 4, "channel_concat");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw ShapeError("channel_concat: batch/spatial mismatch " + sa.to_string() + " vs " +
                     sb.to_string());
  }
  const std::size_t N = sa[0], plane = sa[2] * sa[3];
  const std::size_t a_block = sa[1] * plane, b_block = sb[1] * plane;
  Tensor out(Shape{N, sa[1] + sb[1], sa[2], sa[3]}, 0.0f);
  for (std::size_t n = 0; n < N; ++n) {
    float* dst = out.data().data() + n * (a_block + b_block);
    std::copy_n(a.data().data() + n * a_block, a_block, dst);
    std::copy_n(b.data().data() + n * b_block, b_block, dst + a_block);
  }
  return out;
}

std::pair<Tensor, Tensor> channel_split(const Tensor& x, std::size_t first) {
  require_rank(x, 4, "channel_split");
  const auto& s = x.shape();
  if (first < 1 || first >= s[1]) {
    throw ShapeError("channel_split: split point " + std::to_string(first) + " outside (0, " +
                     std::to_string(s[1]) + ")");
  }
  const std::size_t N = s[0], plane = s[2] * s[3];
  const std::size_t a_block = first * plane, b_block = (s[1] - first) * plane;
  Tensor a(Shape{N, first, s[2], s[3]}, 0.0f);
  Tensor b(Shape{N, s[1] - first, s[2], s[3]}, 0.0f);
  for (std::size_t n = 0; n < N; ++n) {
    const float* src = x.data().data() + n * (a_block + b_block);
    std::copy_n(src, a_block, a.data().data() + n * a_block);
    std::copy_n(src + a_block, b_block, b.data().data() + n * b_block);
  }
  return {std::move(a), std::move(b)};
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t N = x.shape()[0], C = x.shape()[1];
  const std::size_t plane = x.shape()[2] * x.shape()[3];
  Tensor out(Shape{N, C}, 0.0f);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const float* p = x.data().data() + nc * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    out[nc] = static_cast<float>(acc / static_cast<double>(plane));
  }
  return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& d_output) {
  if (input_shape.rank() != 4) throw ShapeError("global_avg_pool_backward: input must be rank 4");
  const std::size_t N = input_shape[0], C = input_shape[1];
  const std::size_t plane = input_shape[2] * input_shape[3];
  if (d_output.shape() != Shape{N, C}) {
    throw ShapeError("global_avg_pool_backward: d_output shape " + d_output.shape().to_string());
  }
  Tensor d_x(input_shape, 0.0f);
  const float scale = 1.0f / static_cast<float>(plane);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const float g = d_output[nc] * scale;
    std::fill_n(d_x.data().data() + nc * plane, plane, g);
  }
  return d_x;
}

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "dense input");
  require_rank(w, 2, "dense weight");
  if (b.shape() != Shape{w.shape()[1]}) {
    throw ShapeError("dense: bias shape " + b.shape().to_string() + " vs weight " +
                     w.shape().to_string());
  }
  Tensor out = matmul(x, w);
  const std::size_t U = w.shape()[1];
  for (std::size_t r = 0; r < out.shape()[0]; ++r) {
    for (std::size_t u = 0; u < U; ++u) out.at(r, u) += b[u];
  }
  return out;
}

LayerGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& d_output) {
  require_rank(x, 2, "dense input");
  require_rank(w, 2, "dense weight");
  const std::size_t N = x.shape()[0], F = x.shape()[1], U = w.shape()[1];
  if (w.shape()[0] != F || d_output.shape() != Shape{N, U}) {
    throw ShapeError("dense_backward: shapes x " + x.shape().to_string() + ", w " +
                     w.shape().to_string() + ", d_output " + d_output.shape().to_string());
  }
  Tensor d_x(x.shape(), 0.0f);
  Tensor d_w(w.shape(), 0.0f);
  Tensor d_b(Shape{U}, 0.0f);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t f = 0; f < F; ++f) {
      double acc = 0.0;
      for (std::size_t u = 0; u < U; ++u) acc += static_cast<double>(d_output.at(n, u)) * w.at(f, u);
      d_x.at(n, f) = static_cast<float>(acc);
    }
  }
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t u = 0; u < U; ++u) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += static_cast<double>(x.at(n, f)) * d_output.at(n, u);
      d_w.at(f, u) = static_cast<float>(acc);
    }
  }
  for (std::size_t u = 0; u < U; ++u) {
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) acc += d_output.at(n, u);
    d_b[u] = static_cast<float>(acc);
  }
  return {std::move(d_x), std::move(d_w), std::move(d_b)};
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t N = logits.shape()[0], m = logits.shape()[1];
  if (m < 2) throw ShapeError("softmax: need at least 2 classes");
  for (float v : logits.data()) {
    if (std::isnan(v)) throw NumericError("softmax: NaN logit");
  }
  Tensor out(logits.shape(), 0.0f);
  for (std::size_t r = 0; r < N; ++r) {
    float mx = logits.at(r, 0);
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, logits.at(r, j));
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) total += std::exp(static_cast<double>(logits.at(r, j)) - mx);
    for (std::size_t j = 0; j < m; ++j) {
      out.at(r, j) =
          static_cast<float>(std::exp(static_cast<double>(logits.at(r, j)) - mx) / total);
    }
  }
  check_finite(out, "softmax");
  return out;
}

namespace {

void check_dropout_rate(float rate) {
  if (!(rate >= 0.0f) || rate >= 1.0f) {
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
}

template <typename Fn>
void for_each_kept(std::size_t n, float rate, std::uint64_t seed, Fn&& fn) {
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) fn(i, rng.uniform() >= rate);
}

}  // namespace

Tensor dropout(const Tensor& x, float rate, std::uint64_t seed, bool training) {
  check_dropout_rate(rate);
  if (!training || rate == 0.0f) return x;
  Tensor out(x.shape(), 0.0f);
  const float scale = 1.0f / (1.0f - rate);
  for_each_kept(x.numel(), rate, seed, [&](std::size_t i, bool keep) {
    out[i] = keep ? x[i] * scale : 0.0f;
  });
  return out;
}

Tensor dropout_backward(const Tensor& d_output, float rate, std::uint64_t seed, bool training) {
  return dropout(d_output, rate, seed, training);
}

}  // namespace fsq
