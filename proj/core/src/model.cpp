#include "fsq/model.hpp"

#include <algorithm>

#include "fsq/error.hpp"
#include "fsq/rng.hpp"

namespace fsq {

void FireSpec::validate() const {
  if (squeeze_1x1 < 1 || expand_1x1 < 1 || expand_3x3 < 1) {
    throw ConfigError("fire spec widths must all be >= 1");
  }
  if (squeeze_1x1 > expand_1x1 + expand_3x3) {
    throw ConfigError("fire spec squeeze width " + std::to_string(squeeze_1x1) +
                      " exceeds expand width " + std::to_string(out_channels()));
  }
}

ModelConfig squeezenet_v11_config(std::size_t num_classes, std::size_t input_size) {
  ModelConfig c;
  c.variant = std::string(kVariantSqueezeNet11);
  c.num_classes = num_classes;
  c.input_size = input_size;
  c.stem_channels = 64;
  c.fire_specs = {{16, 64, 64},  {16, 64, 64},  {32, 128, 128}, {32, 128, 128},
                  {48, 192, 192}, {48, 192, 192}, {64, 256, 256}, {64, 256, 256}};
  c.pool_after = {1, 3};
  c.head_hidden = 512;
  c.dropout_rate = 0.5f;
  return c;
}

ModelConfig tiny_config(std::size_t num_classes, std::size_t input_size) {
  ModelConfig c;
  c.variant = std::string(kVariantTiny);
  c.num_classes = num_classes;
  c.input_size = input_size;
  c.stem_channels = 8;
  c.fire_specs = {{2, 2, 2}, {2, 2, 2}};
  c.pool_after = {};
  c.head_hidden = 16;
  c.dropout_rate = 0.5f;
  return c;
}

void ModelConfig::validate() const {
  if (variant.empty()) throw ConfigError("model variant tag must not be empty");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (fire_specs.empty()) throw ConfigError("fire_specs must not be empty");
  if (variant == kVariantSqueezeNet11 && input_size < 64) {
    throw ConfigError("squeezenet1_1 requires input_size >= 64, got " + std::to_string(input_size));
  }
  if (stem_channels < 1 || head_hidden < 1) {
    throw ConfigError("stem_channels and head_hidden must be >= 1");
  }
  if (!(dropout_rate >= 0.0f) || dropout_rate >= 1.0f) {
    throw ConfigError("dropout_rate must be in [0, 1)");
  }
  for (const auto& f : fire_specs) f.validate();
  for (std::size_t i = 0; i < pool_after.size(); ++i) {
    if (pool_after[i] >= fire_specs.size() || (i > 0 && pool_after[i] <= pool_after[i - 1])) {
      throw ConfigError("pool_after must hold strictly increasing fire indices");
    }
  }
}

namespace detail {

std::vector<Layer> build_layers(const ModelConfig& config) {
  std::vector<Layer> layers;
  Layer stem{LayerKind::Conv, "conv1"};
  stem.conv = {config.stem_channels, 3, 3, 3, 2, 0};
  stem.relu = true;
  layers.push_back(stem);

  std::size_t pool_index = 1;
  auto add_pool = [&] {
    Layer pool{LayerKind::MaxPool, "pool" + std::to_string(pool_index++)};
    pool.pool_kernel = 3;
    pool.pool_stride = 2;
    layers.push_back(pool);
  };
  add_pool();

  std::size_t channels = config.stem_channels;
  for (std::size_t i = 0; i < config.fire_specs.size(); ++i) {
    Layer fire{LayerKind::Fire, "fire" + std::to_string(i + 2)};
    fire.fire = config.fire_specs[i];
    fire.in_channels = channels;
    layers.push_back(fire);
    channels = fire.fire.out_channels();
    if (std::find(config.pool_after.begin(), config.pool_after.end(), i) != config.pool_after.end()) {
      add_pool();
    }
  }

  layers.push_back(Layer{LayerKind::GlobalAvgPool, "avgpool"});
  Layer fc1{LayerKind::Dense, "fc1"};
  fc1.dense_in = channels;
  fc1.dense_out = config.head_hidden;
  fc1.relu = true;
  layers.push_back(fc1);
  layers.push_back(Layer{LayerKind::Dropout, "dropout"});
  Layer fc2{LayerKind::Dense, "fc2"};
  fc2.dense_in = config.head_hidden;
  fc2.dense_out = config.num_classes;
  layers.push_back(fc2);
  return layers;
}

}  // namespace detail

namespace {

using detail::Layer;
using detail::LayerKind;

ConvSpec squeeze_spec(const Layer& l) { return {l.fire.squeeze_1x1, l.in_channels, 1, 1, 1, 0}; }
ConvSpec expand1_spec(const Layer& l) { return {l.fire.expand_1x1, l.fire.squeeze_1x1, 1, 1, 1, 0}; }
ConvSpec expand3_spec(const Layer& l) { return {l.fire.expand_3x3, l.fire.squeeze_1x1, 3, 3, 1, 1}; }

Shape conv_weight_shape(const ConvSpec& s) {
  return Shape{s.out_channels, s.in_channels, s.kernel_h, s.kernel_w};
}

struct ParamSlot {
  std::string name;
  Shape shape;
  std::size_t fan_in;  // 0 marks a bias
};

std::vector<ParamSlot> param_slots(const std::vector<Layer>& layers) {
  std::vector<ParamSlot> slots;
  auto add_conv = [&](const std::string& prefix, const ConvSpec& s) {
    slots.push_back({prefix + "/weight", conv_weight_shape(s), s.in_channels * s.kernel_h * s.kernel_w});
    slots.push_back({prefix + "/bias", Shape{s.out_channels}, 0});
  };
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        add_conv(l.name, l.conv);
        break;
      case LayerKind::Fire:
        add_conv(l.name + "/squeeze1x1", squeeze_spec(l));
        add_conv(l.name + "/expand1x1", expand1_spec(l));
        add_conv(l.name + "/expand3x3", expand3_spec(l));
        break;
      case LayerKind::Dense:
        slots.push_back({l.name + "/weight", Shape{l.dense_in, l.dense_out}, l.dense_in});
        slots.push_back({l.name + "/bias", Shape{l.dense_out}, 0});
        break;
      default:
        break;
    }
  }
  return slots;
}

}  // namespace

std::vector<LayerInfo> describe_layers(const ModelConfig& config) {
  config.validate();
  const auto layers = detail::build_layers(config);
  std::vector<LayerInfo> rows;
  std::size_t c = 3, h = config.input_size, w = config.input_size;
  std::size_t features = 0;
  auto conv_params = [](const ConvSpec& s) {
    return s.out_channels * s.in_channels * s.kernel_h * s.kernel_w + s.out_channels;
  };
  try {
    for (const auto& l : layers) {
      LayerInfo row{l.name, "", Shape{}, 0};
      switch (l.kind) {
        case LayerKind::Conv: {
          std::tie(h, w) = l.conv.output_hw(h, w);
          c = l.conv.out_channels;
          row.kind = "conv3x3/2+relu";
          row.output_shape = Shape{c, h, w};
          row.parameters = conv_params(l.conv);
          break;
        }
        case LayerKind::MaxPool: {
          if (h < l.pool_kernel || w < l.pool_kernel) {
            throw ShapeError(l.name + ": window larger than " + std::to_string(h) + "x" +
                             std::to_string(w) + " input");
          }
          h = (h - l.pool_kernel) / l.pool_stride + 1;
          w = (w - l.pool_kernel) / l.pool_stride + 1;
          row.kind = "maxpool3/2";
          row.output_shape = Shape{c, h, w};
          break;
        }
        case LayerKind::Fire: {
          c = l.fire.out_channels();
          row.kind = "fire(" + std::to_string(l.fire.squeeze_1x1) + "," +
                     std::to_string(l.fire.expand_1x1) + "," + std::to_string(l.fire.expand_3x3) + ")";
          row.output_shape = Shape{c, h, w};
          row.parameters = conv_params(squeeze_spec(l)) + conv_params(expand1_spec(l)) +
                           conv_params(expand3_spec(l));
          break;
        }
        case LayerKind::GlobalAvgPool:
          features = c;
          row.kind = "global_avg_pool";
          row.output_shape = Shape{features};
          break;
        case LayerKind::Dense:
          features = l.dense_out;
          row.kind = l.relu ? "dense+relu" : "dense";
          row.output_shape = Shape{features};
          row.parameters = l.dense_in * l.dense_out + l.dense_out;
          break;
        case LayerKind::Dropout:
          row.kind = "dropout(" + std::to_string(config.dropout_rate).substr(0, 4) + ")";
          row.output_shape = Shape{features};
          break;
      }
      rows.push_back(std::move(row));
    }
  } catch (const ShapeError& e) {
    throw ConfigError("input_size " + std::to_string(config.input_size) +
                      " too small for the pooling stack (" + e.what() + ")");
  }
  rows.push_back(LayerInfo{"softmax", "softmax", Shape{config.num_classes}, 0});
  return rows;
}

// --- fire module ------------------------------------------------------------

namespace {

void check_fire_params(const Tensor& x, const FireSpec& spec, const FireParams& p) {
  if (x.shape().rank() != 4) throw ShapeError("fire: input must be [N,C,H,W]");
  const std::size_t c = x.shape()[1];
  auto expect = [](const Tensor& t, const Shape& s, const char* what) {
    if (t.shape() != s) {
      throw ModelError(std::string("fire: ") + what + " has shape " + t.shape().to_string() +
                       ", expected " + s.to_string());
    }
  };
  expect(p.squeeze_w, Shape{spec.squeeze_1x1, c, 1, 1}, "squeeze weight");
  expect(p.squeeze_b, Shape{spec.squeeze_1x1}, "squeeze bias");
  expect(p.expand1_w, Shape{spec.expand_1x1, spec.squeeze_1x1, 1, 1}, "expand1x1 weight");
  expect(p.expand1_b, Shape{spec.expand_1x1}, "expand1x1 bias");
  expect(p.expand3_w, Shape{spec.expand_3x3, spec.squeeze_1x1, 3, 3}, "expand3x3 weight");
  expect(p.expand3_b, Shape{spec.expand_3x3}, "expand3x3 bias");
}

ConvSpec fire_squeeze(const FireSpec& s, std::size_t in_c) { return {s.squeeze_1x1, in_c, 1, 1, 1, 0}; }
ConvSpec fire_expand1(const FireSpec& s) { return {s.expand_1x1, s.squeeze_1x1, 1, 1, 1, 0}; }
ConvSpec fire_expand3(const FireSpec& s) { return {s.expand_3x3, s.squeeze_1x1, 3, 3, 1, 1}; }

}  // namespace

FireActivations fire_forward_retained(const Tensor& x, const FireSpec& spec,
                                      const FireParams& params) {
  spec.validate();
  check_fire_params(x, spec, params);
  FireActivations a;
  a.input = x;
  a.squeeze = relu(conv2d_forward(x, params.squeeze_w, params.squeeze_b,
                                  fire_squeeze(spec, x.shape()[1])));
  a.expand1 = relu(conv2d_forward(a.squeeze, params.expand1_w, params.expand1_b, fire_expand1(spec)));
  a.expand3 = relu(conv2d_forward(a.squeeze, params.expand3_w, params.expand3_b, fire_expand3(spec)));
  a.output = channel_concat(a.expand1, a.expand3);
  return a;
}

Tensor fire_forward(const Tensor& x, const FireSpec& spec, const FireParams& params) {
  return fire_forward_retained(x, spec, params).output;
}

FireGrads fire_backward(const FireActivations& acts, const FireSpec& spec,
                        const FireParams& params, const Tensor& d_output) {
  require_same_shape(acts.output, d_output, "fire_backward");
  auto [d_e1, d_e3] = channel_split(d_output, spec.expand_1x1);
  auto g1 = conv2d_backward(acts.squeeze, params.expand1_w, fire_expand1(spec),
                            relu_backward(acts.expand1, d_e1));
  auto g3 = conv2d_backward(acts.squeeze, params.expand3_w, fire_expand3(spec),
                            relu_backward(acts.expand3, d_e3));
  Tensor d_squeeze = tensor_add(g1.d_input, g3.d_input);
  auto gs = conv2d_backward(acts.input, params.squeeze_w, fire_squeeze(spec, acts.input.shape()[1]),
                            relu_backward(acts.squeeze, d_squeeze));
  return FireGrads{std::move(gs.d_input),   std::move(*gs.d_weight), std::move(*gs.d_bias),
                   std::move(*g1.d_weight), std::move(*g1.d_bias),   std::move(*g3.d_weight),
                   std::move(*g3.d_bias)};
}

// --- model --------------------------------------------------------------------

Model::Model(ModelConfig config) : config_(std::move(config)) {
  describe_layers(config_);  // validates geometry
  layers_ = detail::build_layers(config_);
  for (auto& slot : param_slots(layers_)) {
    index_.emplace(slot.name, params_.size());
    params_.push_back(Parameter{slot.name, Tensor(slot.shape, 0.0f), Tensor(slot.shape, 0.0f)});
  }
}

std::size_t Model::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ModelError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

bool Model::has_parameter(std::string_view name) const {
  return index_.contains(std::string(name));
}

const Tensor& Model::param(std::string_view name) const { return params_[index_of(name)].value; }

Tensor& Model::param(std::string_view name) { return params_[index_of(name)].value; }

void Model::set_param(std::string_view name, Tensor value) {
  auto& p = params_[index_of(name)];
  if (p.value.shape() != value.shape()) {
    throw CompatibilityError("parameter '" + p.name + "' has shape " + p.value.shape().to_string() +
                             " but value has shape " + value.shape().to_string());
  }
  p.value = std::move(value);
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

void Model::check_input(const Tensor& batch) const {
  const auto& s = batch.shape();
  if (s.rank() != 4 || s[1] != 3 || s[2] != config_.input_size || s[3] != config_.input_size) {
    throw ShapeError("model input must be [N,3," + std::to_string(config_.input_size) + "," +
                     std::to_string(config_.input_size) + "], got " + s.to_string());
  }
}

Tensor Model::run(const Tensor& batch, const ForwardOptions& options,
                  std::vector<detail::LayerCache>* cache) const {
  check_input(batch);
  if (cache) cache->assign(layers_.size(), {});
  Tensor x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    detail::LayerCache* slot = cache ? &(*cache)[i] : nullptr;
    if (slot) slot->input = x;
    switch (l.kind) {
      case LayerKind::Conv:
        x = relu(conv2d_forward(x, param(l.name + "/weight"), param(l.name + "/bias"), l.conv));
        break;
      case LayerKind::MaxPool:
        x = maxpool2d(x, l.pool_kernel, l.pool_stride);
        break;
      case LayerKind::Fire: {
        const FireParams fp{param(l.name + "/squeeze1x1/weight"), param(l.name + "/squeeze1x1/bias"),
                            param(l.name + "/expand1x1/weight"),  param(l.name + "/expand1x1/bias"),
                            param(l.name + "/expand3x3/weight"),  param(l.name + "/expand3x3/bias")};
        if (slot) {
          slot->fire = fire_forward_retained(x, l.fire, fp);
          x = slot->fire.output;
        } else {
          x = fire_forward(x, l.fire, fp);
        }
        break;
      }
      case LayerKind::GlobalAvgPool:
        x = global_avg_pool(x);
        break;
      case LayerKind::Dense:
        x = dense_forward(x, param(l.name + "/weight"), param(l.name + "/bias"));
        if (l.relu) x = relu(x);
        break;
      case LayerKind::Dropout: {
        const bool active = options.training && options.dropout && config_.dropout_rate > 0.0f;
        x = dropout(x, config_.dropout_rate, options.dropout_seed, active);
        if (slot) {
          slot->dropout_active = active;
          slot->dropout_seed = options.dropout_seed;
        }
        break;
      }
    }
    if (slot) slot->output = x;
  }
  check_finite(x, "model logits");
  return x;
}

Tensor Model::logits(const Tensor& batch) const { return run(batch, ForwardOptions{}, nullptr); }

Tensor Model::predict(const Tensor& batch) const { return softmax(logits(batch)); }

Tensor Model::forward(const Tensor& batch, const ForwardOptions& options) {
  if (!options.training) return predict(batch);
  Retained r;
  r.logits = run(batch, options, &r.layers);
  retained_ = std::move(r);
  return softmax(retained_->logits);
}

const Tensor& Model::retained_logits() const {
  if (!retained_) throw StateError("no retained forward pass");
  return retained_->logits;
}

GradientSet Model::backward(const Tensor& d_logits) const {
  if (!retained_) throw StateError("backward called without a retained training forward pass");
  require_same_shape(retained_->logits, d_logits, "model backward d_logits");
  GradientSet grads;
  Tensor g = d_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& l = layers_[i];
    const auto& c = retained_->layers[i];
    switch (l.kind) {
      case LayerKind::Conv: {
        auto lg = conv2d_backward(c.input, param(l.name + "/weight"), l.conv, relu_backward(c.output, g));
        grads.emplace(l.name + "/weight", std::move(*lg.d_weight));
        grads.emplace(l.name + "/bias", std::move(*lg.d_bias));
        g = std::move(lg.d_input);
        break;
      }
      case LayerKind::MaxPool:
        g = maxpool2d_backward(c.input, l.pool_kernel, l.pool_stride, g);
        break;
      case LayerKind::Fire: {
        const FireParams fp{param(l.name + "/squeeze1x1/weight"), param(l.name + "/squeeze1x1/bias"),
                            param(l.name + "/expand1x1/weight"),  param(l.name + "/expand1x1/bias"),
                            param(l.name + "/expand3x3/weight"),  param(l.name + "/expand3x3/bias")};
        auto fg = fire_backward(c.fire, l.fire, fp, g);
        grads.emplace(l.name + "/squeeze1x1/weight", std::move(fg.d_squeeze_w));
        grads.emplace(l.name + "/squeeze1x1/bias", std::move(fg.d_squeeze_b));
        grads.emplace(l.name + "/expand1x1/weight", std::move(fg.d_expand1_w));
        grads.emplace(l.name + "/expand1x1/bias", std::move(fg.d_expand1_b));
        grads.emplace(l.name + "/expand3x3/weight", std::move(fg.d_expand3_w));
        grads.emplace(l.name + "/expand3x3/bias", std::move(fg.d_expand3_b));
        g = std::move(fg.d_input);
        break;
      }
      case LayerKind::GlobalAvgPool:
        g = global_avg_pool_backward(c.input.shape(), g);
        break;
      case LayerKind::Dense: {
        if (l.relu) g = relu_backward(c.output, g);
        auto lg = dense_backward(c.input, param(l.name + "/weight"), g);
        grads.emplace(l.name + "/weight", std::move(*lg.d_weight));
        grads.emplace(l.name + "/bias", std::move(*lg.d_bias));
        g = std::move(lg.d_input);
        break;
      }
      case LayerKind::Dropout:
        g = dropout_backward(g, config_.dropout_rate, c.dropout_seed, c.dropout_active);
        break;
    }
  }
  return grads;
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  Model model(config);
  const auto slots = param_slots(detail::build_layers(config));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].fan_in == 0) continue;
    model.set_param(slots[i].name, he_init(slots[i].shape, slots[i].fan_in, derive_seed(seed, i)));
  }
  return model;
}

Tensor model_forward(Model& model, const Tensor& batch, const ForwardOptions& options) {
  return model.forward(batch, options);
}

GradientSet model_backward(const Model& model, const Tensor& d_logits) {
  return model.backward(d_logits);
}

std::size_t parameter_count(const Model& model) { return model.parameter_count(); }

}  // namespace fsq
