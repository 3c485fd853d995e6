#include <benchmark/benchmark.h>

#include "fsq/checkpoint.hpp"
#include "fsq/model.hpp"
#include "fsq/ops.hpp"
#include "fsq/training.hpp"

using namespace fsq;

namespace {

Tensor random_input(const Shape& shape, std::uint64_t seed) { return he_init(shape, 2, seed); }

void BM_Conv3x3(benchmark::State& state) {
  const std::size_t c = static_cast<std::size_t>(state.range(0));
  const std::size_t hw = static_cast<std::size_t>(state.range(1));
  const ConvSpec spec{c, c, 3, 3, 1, 1};
  const Tensor x = random_input(Shape{1, c, hw, hw}, 1);
  const Tensor w = he_init(Shape{c, c, 3, 3}, c * 9, 2);
  const Tensor b(Shape{c}, 0.0f);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, w, b, spec));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * hw * hw));
}
BENCHMARK(BM_Conv3x3)->Args({16, 56})->Args({64, 14})->Unit(benchmark::kMillisecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  const std::size_t c = static_cast<std::size_t>(state.range(0));
  const std::size_t hw = static_cast<std::size_t>(state.range(1));
  const ConvSpec spec{c, c, 3, 3, 1, 1};
  const Tensor x = random_input(Shape{1, c, hw, hw}, 1);
  const Tensor w = he_init(Shape{c, c, 3, 3}, c * 9, 2);
  const Tensor dy = random_input(Shape{1, c, hw, hw}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_backward(x, w, spec, dy));
}
BENCHMARK(BM_Conv3x3Backward)->Args({16, 56})->Unit(benchmark::kMillisecond);

void BM_TinyTrainStep(benchmark::State& state) {
  Model model = build_model(tiny_config(3, 32), 1);
  const Tensor x = random_input(Shape{8, 3, 32, 32}, 4);
  const std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2, 0, 1};
  TrainConfig tc;
  tc.learning_rate = 0.01f;
  ForwardOptions opts;
  opts.training = true;
  for (auto _ : state) {
    const LossResult lr = cross_entropy(model.forward(x, opts), labels);
    sgd_step(model, model.backward(lr.d_logits), tc);
  }
}
BENCHMARK(BM_TinyTrainStep)->Unit(benchmark::kMillisecond);

void BM_FullForward(benchmark::State& state) {
  const Model model = build_model(squeezenet_v11_config(), 1);
  const Tensor x = random_input(Shape{1, 3, 244, 244}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x));
}
BENCHMARK(BM_FullForward)->Unit(benchmark::kMillisecond);

void BM_CheckpointEncode(benchmark::State& state) {
  const Model model = build_model(squeezenet_v11_config(), 1);
  std::vector<std::string> labels;
  for (char c = 'a'; c < 'a' + 24; ++c) labels.emplace_back(1, c);
  for (auto _ : state) benchmark::DoNotOptimize(encode_checkpoint(model, History{}, {0, 0, 0}, labels));
}
BENCHMARK(BM_CheckpointEncode)->Unit(benchmark::kMillisecond);

void BM_CheckpointDecode(benchmark::State& state) {
  const Model model = build_model(squeezenet_v11_config(), 1);
  std::vector<std::string> labels;
  for (char c = 'a'; c < 'a' + 24; ++c) labels.emplace_back(1, c);
  const auto bytes = encode_checkpoint(model, History{}, {0, 0, 0}, labels);
  for (auto _ : state) benchmark::DoNotOptimize(decode_checkpoint(bytes));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bytes.size()));
}
BENCHMARK(BM_CheckpointDecode)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
