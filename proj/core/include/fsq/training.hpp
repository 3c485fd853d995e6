#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsq/data.hpp"
#include "fsq/model.hpp"
#include "fsq/tensor.hpp"

namespace fsq {

struct TrainConfig {
  float learning_rate = 0.001f;
  float momentum = 0.9f;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 42;
  bool dropout_on = false;
  double val_fraction = 0.1;
  /// Sequential execution, no prefetch thread, and wall_time recorded as 0
  /// so that histories are bit-reproducible.
  bool deterministic = false;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double wall_time = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct History {
  std::vector<EpochMetrics> epochs;

  /// Throws StateError unless m.epoch == last epoch + 1 (1 for the first).
  void append(const EpochMetrics& m);
  std::size_t next_epoch() const { return epochs.empty() ? 1 : epochs.back().epoch + 1; }

  friend bool operator==(const History&, const History&) = default;
};

struct LossResult {
  double loss = 0.0;
  /// (p - y) / N: gradient of the mean loss with respect to the logits.
  Tensor d_logits;
};

/// Categorical cross-entropy -(1/N) sum_i log p[i, label_i] with p clamped
/// to [1e-12, 1], fused with the softmax backward.
LossResult cross_entropy(const Tensor& probs, std::span<const std::size_t> labels);

/// Momentum SGD: v <- momentum * v + g; theta <- theta - lr * v.
void sgd_step(Model& model, const GradientSet& grads, const TrainConfig& config);

/// Turns decoded images into model input: resize to input_size if needed,
/// augment when a seed is supplied, then normalize with the channel means.
struct Preprocessor {
  std::size_t input_size = 244;
  ChannelMeans means{0.0f, 0.0f, 0.0f};
  AugmentConfig augment;

  /// [3, S, S] tensor for one image.
  Tensor operator()(const ImageBuffer& img, std::optional<std::uint64_t> augment_seed = std::nullopt) const;
  /// [B, 3, S, S] batch of dataset.samples[indices[i]]. When `augment_base`
  /// is set, sample index j is augmented with derive_seed(*augment_base, j).
  Tensor batch(const Dataset& dataset, std::span<const std::size_t> indices,
               std::optional<std::uint64_t> augment_base = std::nullopt) const;
};

/// One pass over `train` in shuffled mini-batches (permutation seeded with
/// seed ^ epoch_index; the last partial batch is kept), followed by
/// validation accuracy with dropout off.
EpochMetrics train_epoch(Model& model, const Dataset& train, const Dataset& val,
                         const TrainConfig& config, std::size_t epoch_index,
                         const Preprocessor& preprocessor);

struct Evaluation {
  double accuracy = 0.0;
  /// confusion[i][j]: samples of true class i predicted as j.
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t total = 0;
};

Evaluation tabulate_confusion(std::span<const std::size_t> truth,
                              std::span<const std::size_t> predicted, std::size_t num_classes);

/// Accuracy and confusion matrix of argmax predictions (inference mode).
Evaluation evaluate(const Model& model, const Dataset& dataset, const Preprocessor& preprocessor,
                    std::size_t batch_size = 32);

/// Index of the first maximum in each row of an [N, m] tensor.
std::vector<std::size_t> argmax_rows(const Tensor& t);

/// Pearson r of two equal-length series (length >= 2). Throws
/// UndefinedCorrelationError if either has zero variance.
double pearson_correlation(std::span<const double> a, std::span<const double> b);

/// {"epoch":..,"train_loss":..,"train_acc":..,"val_acc":..,"seconds":..}
std::string metrics_json_line(const EpochMetrics& m);

/// Bounded blocking FIFO used to prefetch preprocessed batches.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

  /// Blocks while full. Returns false if the queue was closed.
  bool push(T value) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
    return true;
  }

  /// Blocks while empty. Returns nullopt once closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return value;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  bool closed_ = false;
};

}  // namespace fsq
