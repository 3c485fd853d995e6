#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fsq/ops.hpp"
#include "fsq/tensor.hpp"

namespace fsq {

/// Channel widths of one fire module: a 1x1 squeeze conv feeding parallel
/// 1x1 and 3x3 expand convs whose outputs are concatenated.
struct FireSpec {
  std::size_t squeeze_1x1 = 1;
  std::size_t expand_1x1 = 1;
  std::size_t expand_3x3 = 1;

  std::size_t out_channels() const { return expand_1x1 + expand_3x3; }
  /// Throws ConfigError unless all widths are >= 1 and squeeze <= expand total.
  void validate() const;

  friend bool operator==(const FireSpec&, const FireSpec&) = default;
};

inline constexpr std::string_view kVariantSqueezeNet11 = "squeezenet1_1";
inline constexpr std::string_view kVariantTiny = "tiny";

/// Network topology:
///   conv1 3x3/2 (stem_channels) + relu -> maxpool 3/2
///   -> fire modules, with a maxpool 3/2 after each index in pool_after
///   -> global average pool -> fc1 (head_hidden) + relu -> dropout
///   -> fc2 (num_classes) -> softmax
struct ModelConfig {
  std::string variant{kVariantSqueezeNet11};
  std::size_t num_classes = 24;
  std::size_t input_size = 244;
  std::size_t stem_channels = 64;
  std::vector<FireSpec> fire_specs;
  /// Zero-based fire indices followed by a 3x3/2 max pool, strictly increasing.
  std::vector<std::size_t> pool_after;
  std::size_t head_hidden = 512;
  float dropout_rate = 0.5f;

  /// Throws ConfigError on invalid widths, class counts, or an input size too
  /// small for the pooling stack. The squeezenet1_1 variant also requires
  /// input_size >= 64.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// SqueezeNet v1.1 backbone with the two-dense-layer head.
ModelConfig squeezenet_v11_config(std::size_t num_classes = 24, std::size_t input_size = 244);

/// Small network for gradient checks and overfit tests: 8-channel stem, two
/// fire(2,2,2) modules, 16-unit hidden layer.
ModelConfig tiny_config(std::size_t num_classes = 3, std::size_t input_size = 32);

/// One row of the layer table. output_shape excludes the batch dimension.
struct LayerInfo {
  std::string name;
  std::string kind;
  Shape output_shape;
  std::size_t parameters = 0;
};

/// Static layer table for a config; validates the config first.
std::vector<LayerInfo> describe_layers(const ModelConfig& config);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor velocity;
};

/// Gradient per parameter name.
using GradientSet = std::map<std::string, Tensor, std::less<>>;

/// Borrowed views of one fire module's six parameter tensors.
struct FireParams {
  const Tensor& squeeze_w;
  const Tensor& squeeze_b;
  const Tensor& expand1_w;
  const Tensor& expand1_b;
  const Tensor& expand3_w;
  const Tensor& expand3_b;
};

/// Intermediate activations of one fire module (all post-relu).
struct FireActivations {
  Tensor input;
  Tensor squeeze;
  Tensor expand1;
  Tensor expand3;
  Tensor output;
};

struct FireGrads {
  Tensor d_input;
  Tensor d_squeeze_w, d_squeeze_b;
  Tensor d_expand1_w, d_expand1_b;
  Tensor d_expand3_w, d_expand3_b;
};

Tensor fire_forward(const Tensor& x, const FireSpec& spec, const FireParams& params);
FireActivations fire_forward_retained(const Tensor& x, const FireSpec& spec,
                                      const FireParams& params);
FireGrads fire_backward(const FireActivations& acts, const FireSpec& spec,
                        const FireParams& params, const Tensor& d_output);

struct ForwardOptions {
  /// Retain activations for a following backward pass.
  bool training = false;
  /// Apply dropout before fc2. Only honoured when training.
  bool dropout = false;
  std::uint64_t dropout_seed = 0;
};

namespace detail {

enum class LayerKind { Conv, MaxPool, Fire, GlobalAvgPool, Dense, Dropout };

struct Layer {
  LayerKind kind = LayerKind::Conv;
  std::string name{};
  ConvSpec conv{};
  FireSpec fire{};
  std::size_t in_channels = 0;
  std::size_t pool_kernel = 0;
  std::size_t pool_stride = 0;
  std::size_t dense_in = 0;
  std::size_t dense_out = 0;
  bool relu = false;
};

struct LayerCache {
  Tensor input;
  Tensor output;
  FireActivations fire;
  bool dropout_active = false;
  std::uint64_t dropout_seed = 0;
};

std::vector<Layer> build_layers(const ModelConfig& config);

}  // namespace detail

/// SqueezeNet classifier: configuration, parameters θ with optimizer
/// velocities, and the activations retained by the last training forward.
///
/// Inference (logits/predict) is const and safe to call concurrently on a
/// shared model. forward_train/backward mutate the retained cache.
class Model {
 public:
  /// All parameters zero-filled; velocities zero.
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& parameters() { return params_; }

  bool has_parameter(std::string_view name) const;
  const Tensor& param(std::string_view name) const;
  Tensor& param(std::string_view name);
  /// Replaces a parameter value; throws CompatibilityError on shape mismatch.
  void set_param(std::string_view name, Tensor value);

  Tensor logits(const Tensor& batch) const;
  Tensor predict(const Tensor& batch) const;

  /// Forward pass returning probabilities. Retains activations when
  /// options.training is set.
  Tensor forward(const Tensor& batch, const ForwardOptions& options);
  /// Logits of the last training forward.
  const Tensor& retained_logits() const;

  /// Gradients of every parameter given dL/dlogits of the last training forward.
  GradientSet backward(const Tensor& d_logits) const;

  bool has_retained() const { return retained_.has_value(); }
  void clear_retained() { retained_.reset(); }

  std::size_t parameter_count() const;

 private:
  struct Retained {
    std::vector<detail::LayerCache> layers;
    Tensor logits;
  };

  std::size_t index_of(std::string_view name) const;
  void check_input(const Tensor& batch) const;
  Tensor run(const Tensor& batch, const ForwardOptions& options,
             std::vector<detail::LayerCache>* cache) const;

  ModelConfig config_;
  std::vector<detail::Layer> layers_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::optional<Retained> retained_;
};

/// Builds the model and He-initializes every weight (zero biases). Each
/// parameter draws from its own stream derived from `seed`.
Model build_model(const ModelConfig& config, std::uint64_t seed);

Tensor model_forward(Model& model, const Tensor& batch, const ForwardOptions& options = {});
GradientSet model_backward(const Model& model, const Tensor& d_logits);
std::size_t parameter_count(const Model& model);

}  // namespace fsq
