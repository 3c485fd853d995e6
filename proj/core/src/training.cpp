#include "fsq/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

#include <json.hpp>

#include "fsq/error.hpp"
#include "fsq/rng.hpp"

namespace fsq {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0f) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in (0, 1)");
}

void History::append(const EpochMetrics& m) {
  if (m.epoch != next_epoch()) {
    throw StateError("history epoch " + std::to_string(m.epoch) + " does not follow " +
                     std::to_string(next_epoch() - 1));
  }
  epochs.push_back(m);
}

LossResult cross_entropy(const Tensor& probs, std::span<const std::size_t> labels) {
  if (probs.shape().rank() != 2) throw ShapeError("cross_entropy: probs must be [N, m]");
  const std::size_t n = probs.shape()[0], m = probs.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  LossResult r{0.0, Tensor(probs.shape(), 0.0f)};
  double total = 0.0;
  const float inv_n = 1.0f / static_cast<float>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= m) {
      throw DataError("label " + std::to_string(labels[i]) + " out of range for " +
                      std::to_string(m) + " classes");
    }
    const double p = std::clamp(static_cast<double>(probs.at(i, labels[i])), 1e-12, 1.0);
    total -= std::log(p);
    for (std::size_t j = 0; j < m; ++j) {
      const float y = j == labels[i] ? 1.0f : 0.0f;
      r.d_logits.at(i, j) = (probs.at(i, j) - y) * inv_n;
    }
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

void sgd_step(Model& model, const GradientSet& grads, const TrainConfig& config) {
  for (const auto& p : model.parameters()) {
    auto it = grads.find(p.name);
    if (it == grads.end()) throw StateError("sgd_step: missing gradient for '" + p.name + "'");
    require_same_shape(p.value, it->second, "sgd_step " + p.name);
  }
  const float lr = config.learning_rate;
  const float mu = config.momentum;
  for (auto& p : model.parameters()) {
    const Tensor& g = grads.find(p.name)->second;
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      p.velocity[i] = mu * p.velocity[i] + g[i];
      p.value[i] -= lr * p.velocity[i];
    }
  }
}

Tensor Preprocessor::operator()(const ImageBuffer& img, std::optional<std::uint64_t> augment_seed) const {
  const int side = static_cast<int>(input_size);
  const ImageBuffer* src = &img;
  ImageBuffer resized;
  if (img.width != side || img.height != side) {
    resized = resize_bilinear(img, side, side);
    src = &resized;
  }
  if (augment_seed && augment.enabled) return normalize(fsq::augment(*src, augment, *augment_seed), means);
  return normalize(*src, means);
}

Tensor Preprocessor::batch(const Dataset& dataset, std::span<const std::size_t> indices,
                           std::optional<std::uint64_t> augment_base) const {
  const std::size_t per = 3 * input_size * input_size;
  Tensor out(Shape{indices.size(), 3, input_size, input_size}, 0.0f);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t j = indices[b];
    std::optional<std::uint64_t> seed;
    if (augment_base) seed = derive_seed(*augment_base, j);
    const Tensor t = (*this)(dataset.samples.at(j).image, seed);
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& t) {
  if (t.shape().rank() != 2) throw ShapeError("argmax_rows: expected [N, m]");
  std::vector<std::size_t> out(t.shape()[0]);
  for (std::size_t r = 0; r < out.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < t.shape()[1]; ++j) {
      if (t.at(r, j) > t.at(r, best)) best = j;
    }
    out[r] = best;
  }
  return out;
}

namespace {

struct PreparedBatch {
  std::size_t index = 0;
  Tensor input;
  std::vector<std::size_t> labels;
};

template <typename E>
[[noreturn]] void rethrow_as(const E& e, const std::string& context) {
  throw E(context + ": " + e.what());
}

}  // namespace

EpochMetrics train_epoch(Model& model, const Dataset& train, const Dataset& val,
                         const TrainConfig& config, std::size_t epoch_index,
                         const Preprocessor& preprocessor) {
  config.validate();
  if (train.samples.empty() || val.samples.empty()) {
    throw DataError("train_epoch requires non-empty train and validation sets");
  }
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = train.size();
  const std::uint64_t epoch_seed = config.seed ^ static_cast<std::uint64_t>(epoch_index);
  const std::vector<std::size_t> order = permutation(n, epoch_seed);
  const std::uint64_t augment_base = derive_seed(epoch_seed, 0xA0);
  const std::uint64_t dropout_base = derive_seed(epoch_seed, 0xD0);
  const std::size_t num_batches = (n + config.batch_size - 1) / config.batch_size;

  auto prepare = [&](std::size_t b) {
    PreparedBatch pb;
    pb.index = b;
    const std::size_t begin = b * config.batch_size;
    const std::size_t end = std::min(n, begin + config.batch_size);
    std::span<const std::size_t> idx(order.data() + begin, end - begin);
    pb.input = preprocessor.batch(train, idx, augment_base);
    pb.labels.reserve(idx.size());
    for (std::size_t j : idx) pb.labels.push_back(train.samples[j].label);
    return pb;
  };

  double loss_sum = 0.0;
  std::size_t correct = 0;
  auto consume = [&](PreparedBatch& pb) {
    ForwardOptions opts;
    opts.training = true;
    opts.dropout = config.dropout_on;
    opts.dropout_seed = derive_seed(dropout_base, pb.index);
    const Tensor probs = model.forward(pb.input, opts);
    const LossResult lr = cross_entropy(probs, pb.labels);
    loss_sum += lr.loss * static_cast<double>(pb.labels.size());
    const auto pred = argmax_rows(probs);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == pb.labels[i];
    sgd_step(model, model.backward(lr.d_logits), config);
  };

  const std::string context = "epoch " + std::to_string(epoch_index);
  try {
    if (config.deterministic || num_batches < 2) {
      for (std::size_t b = 0; b < num_batches; ++b) {
        PreparedBatch pb = prepare(b);
        consume(pb);
      }
    } else {
      BoundedQueue<PreparedBatch> queue(2);
      std::exception_ptr producer_error;
      std::thread producer([&] {
        try {
          for (std::size_t b = 0; b < num_batches; ++b) {
            if (!queue.push(prepare(b))) return;
          }
        } catch (...) {
          producer_error = std::current_exception();
        }
        queue.close();
      });
      try {
        while (auto pb = queue.pop()) consume(*pb);
      } catch (...) {
        queue.close();
        producer.join();
        throw;
      }
      producer.join();
      if (producer_error) std::rethrow_exception(producer_error);
    }
  } catch (const ShapeError& e) {
    rethrow_as(e, context);
  } catch (const DataError& e) {
    rethrow_as(e, context);
  } catch (const NumericError& e) {
    rethrow_as(e, context);
  }
  model.clear_retained();

  EpochMetrics m;
  m.epoch = epoch_index;
  m.train_loss = loss_sum / static_cast<double>(n);
  m.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  m.val_accuracy = evaluate(model, val, preprocessor, config.batch_size).accuracy;
  m.wall_time = config.deterministic
                    ? 0.0
                    : std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

Evaluation tabulate_confusion(std::span<const std::size_t> truth,
                              std::span<const std::size_t> predicted, std::size_t num_classes) {
  if (truth.size() != predicted.size()) throw ShapeError("tabulate_confusion: length mismatch");
  Evaluation e;
  e.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes) {
      throw DataError("tabulate_confusion: class index out of range");
    }
    ++e.confusion[truth[i]][predicted[i]];
    hits += truth[i] == predicted[i];
  }
  e.total = truth.size();
  e.accuracy = e.total ? static_cast<double>(hits) / static_cast<double>(e.total) : 0.0;
  return e;
}

Evaluation evaluate(const Model& model, const Dataset& dataset, const Preprocessor& preprocessor,
                    std::size_t batch_size) {
  if (dataset.samples.empty()) throw DataError("evaluate: dataset is empty");
  if (batch_size == 0) batch_size = 1;
  const std::size_t m = model.config().num_classes;
  std::vector<std::size_t> truth, predicted;
  truth.reserve(dataset.size());
  predicted.reserve(dataset.size());
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < dataset.size(); begin += batch_size) {
    const std::size_t end = std::min(dataset.size(), begin + batch_size);
    idx.clear();
    for (std::size_t i = begin; i < end; ++i) {
      if (dataset.samples[i].label >= m) {
        throw DataError("evaluate: label out of range for " + dataset.samples[i].source_path);
      }
      idx.push_back(i);
      truth.push_back(dataset.samples[i].label);
    }
    const auto pred = argmax_rows(model.predict(preprocessor.batch(dataset, idx)));
    predicted.insert(predicted.end(), pred.begin(), pred.end());
  }
  return tabulate_confusion(truth, predicted, m);
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw DataError("pearson_correlation needs two series of equal length >= 2");
  }
  const double n = static_cast<double>(a.size());
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= n;
  mean_b /= n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a, db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) {
    throw UndefinedCorrelationError("pearson_correlation: a series has zero variance");
  }
  return std::clamp(cov / std::sqrt(var_a * var_b), -1.0, 1.0);
}

std::string metrics_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["train_loss"] = m.train_loss;
  j["train_acc"] = m.train_accuracy;
  j["val_acc"] = m.val_accuracy;
  j["seconds"] = m.wall_time;
  return j.dump();
}

}  // namespace fsq
