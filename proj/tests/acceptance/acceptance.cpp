#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "fixtures.hpp"
#include "fsq/checkpoint.hpp"
#include "fsq/error.hpp"
#include "fsq/training.hpp"
#include "gradient_checks.hpp"
#include "overfit.hpp"
#include "reference.hpp"

using namespace fsq;
using namespace fsq::testing;

namespace {

enum class Status { Pass, Fail, Skip, Info };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) { return {ok ? Status::Pass : Status::Fail, std::move(detail)}; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "fsq");
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  return code;
}

Outcome full_scale() {
  return {Status::Info,
          "full-scale accuracies (83.29% / 87.47%) need the full image set and GPU training; "
          "substituted by criteria 2-9"};
}

Outcome gradients() {
  constexpr int kSeeds = 20;
  const std::vector<std::pair<const char*, GradCheck (*)(std::uint64_t)>> ops{
      {"conv2d", check_conv_gradients},   {"relu", check_relu_gradients},
      {"maxpool", check_maxpool_gradients}, {"concat", check_concat_gradients},
      {"gap", check_gap_gradients},       {"dense", check_dense_gradients},
      {"dropout", check_dropout_gradients}, {"softmax_ce", check_softmax_ce_gradients},
      {"fire", check_fire_gradients}};
  GradCheck per_op;
  std::string worst_op;
  double worst = 0.0;
  for (const auto& [name, fn] : ops) {
    for (int s = 0; s < kSeeds; ++s) {
      const GradCheck gc = fn(1000 + s);
      if (gc.max_rel_error > worst) {
        worst = gc.max_rel_error;
        worst_op = name;
      }
      per_op.merge(gc);
    }
  }
  GradCheck model;
  for (int s = 0; s < kSeeds; ++s) model.merge(check_model_gradients(2000 + s));
  const bool ok = per_op.max_rel_error < 1e-3 && model.max_rel_error < 1e-2 && per_op.checked > 0 && model.checked > 0;
  return pass_if(ok, "per-op max rel err " + fmt("%.2e", per_op.max_rel_error) + " (" + worst_op + ", limit 1e-3), " +
                         "model max rel err " + fmt("%.2e", model.max_rel_error) + " (limit 1e-2), " +
                         std::to_string(per_op.checked + model.checked) + " partials over " +
                         std::to_string(kSeeds) + " seeds");
}

Outcome conv_oracle() {
  const SweepResult r = conv_oracle_sweep(7);
  return pass_if(r.cases > 0 && r.mismatches == 0,
                 std::to_string(r.cases) + " geometries, " + std::to_string(r.mismatches) + " bitwise mismatches" +
                     (r.first_mismatch.empty() ? "" : " (first: " + r.first_mismatch + ")"));
}

Outcome loss_analytics() {
  double uniform_err = 0.0, onehot = 0.0, row_sum = 0.0;
  for (std::size_t m = 2; m <= 26; ++m) {
    const std::vector<std::size_t> labels{0, m - 1};
    const LossResult u = cross_entropy(Tensor(Shape{2, m}, 1.0f / static_cast<float>(m)), labels);
    uniform_err = std::max(uniform_err, std::abs(u.loss - std::log(static_cast<double>(m))));

    Tensor hot(Shape{2, m}, 0.0f);
    hot.at(0, 0) = 1.0f;
    hot.at(1, m - 1) = 1.0f;
    onehot = std::max(onehot, cross_entropy(hot, labels).loss);

    Rng rng(m);
    Tensor z = random_tensor(Shape{2, m}, rng, -3, 3);
    const LossResult r = cross_entropy(softmax(z), labels);
    for (std::size_t i = 0; i < 2; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += r.d_logits.at(i, j);
      row_sum = std::max(row_sum, std::abs(s));
    }
  }
  const bool ok = uniform_err < 1e-6 && onehot <= -std::log(1.0 - 1e-12) + 1e-12 && row_sum < 1e-6;
  return pass_if(ok, "max |L - ln m| " + fmt("%.2e", uniform_err) + ", one-hot loss " + fmt("%.2e", onehot) +
                         ", max |row sum d_logits| " + fmt("%.2e", row_sum));
}

Outcome overfit() {
  const Dataset data = color_dataset(2, 20, 32, 42);
  const OverfitRun run = run_overfit(data, 15, 42);
  std::size_t reached = 0;
  for (const auto& e : run.history.epochs) {
    if (e.train_accuracy >= 0.95) {
      reached = e.epoch;
      break;
    }
  }
  return pass_if(reached != 0 && run.final_eval.accuracy >= 0.95,
                 "m=2, 40 samples, seed 42: train acc " + fmt("%.3f", run.history.epochs.back().train_accuracy) +
                     " after 15 epochs, first >= 0.95 at epoch " + std::to_string(reached));
}

Outcome overfit_seed_rate() {
  std::string detail;
  for (std::size_t m = 2; m <= 4; ++m) {
    const Dataset data = color_dataset(m, 40 / m, 32, 42);
    int hits = 0;
    constexpr int kSeeds = 12;
    for (int s = 0; s < kSeeds; ++s) {
      const OverfitRun run = run_overfit(data, 15, 100 + s);
      hits += run.history.epochs.back().train_accuracy >= 0.95;
    }
    detail += (detail.empty() ? "" : ", ") + std::string("m=") + std::to_string(m) + ": " + std::to_string(hits) +
              "/" + std::to_string(kSeeds);
  }
  return {Status::Info, "tiny-config seeds reaching >= 0.95 in 15 epochs: " + detail};
}

Outcome checkpoint_round_trip() {
  const ModelConfig cfg = tiny_config(3, 32);
  const Model model = build_model(cfg, 5);
  Rng rng(6);
  const Tensor x = random_tensor(Shape{2, 3, 32, 32}, rng);
  const Tensor before = model.predict(x);
  History h;
  h.append({1, 1.0, 0.5, 0.5, 0.0});
  TempDir dir;
  const auto path = dir / "rt.fsq";
  save_checkpoint(model, h, {0.1f, 0.2f, 0.3f}, {"x", "y", "z"}, path);
  const Checkpoint loaded = load_checkpoint(path);
  const Tensor after = loaded.model.predict(x);
  const bool identical = before.data().size() == after.data().size() &&
                         std::memcmp(before.data().data(), after.data().data(), before.data().size() * 4) == 0;

  auto bytes = encode_checkpoint(model, h, {0.1f, 0.2f, 0.3f}, {"x", "y", "z"});
  std::size_t detected = 0, trials = 0;
  for (std::size_t pos = 16; pos < bytes.size(); pos += 97, ++trials) {
    bytes[pos] ^= 0x10;
    try {
      decode_checkpoint(bytes);
    } catch (const CorruptionError&) {
      ++detected;
    } catch (const Error&) {
    }
    bytes[pos] ^= 0x10;
  }
  return pass_if(identical && detected == trials,
                 std::string("forward ") + (identical ? "bit-identical" : "DIFFERS") + " after reload, " +
                     std::to_string(detected) + "/" + std::to_string(trials) + " single-byte flips flagged by CRC");
}

Outcome determinism() {
  TempDir dir;
  write_color_dataset(dir / "data", 2, 10, 32, 9);
  auto train = [&](const std::string& out) {
    return run_cli({"train", "--data", (dir / "data").string(), "--out", (dir / out).string(), "--arch", "tiny",
                    "--image-size", "32", "--epochs", "3", "--batch", "4", "--lr", "0.03", "--dropout", "true",
                    "--augment", "true", "--flip", "true", "--deterministic"});
  };
  const int a = train("a.fsq"), b = train("b.fsq");
  const bool ck = slurp(dir / "a.fsq") == slurp(dir / "b.fsq") && !slurp(dir / "a.fsq").empty();
  const bool mx = slurp(dir / "a.fsq.metrics.jsonl") == slurp(dir / "b.fsq.metrics.jsonl");
  return pass_if(a == 0 && b == 0 && ck && mx, std::string("exit codes ") + std::to_string(a) + "/" +
                                                   std::to_string(b) + ", checkpoints " +
                                                   (ck ? "identical" : "differ") + ", metrics " +
                                                   (mx ? "identical" : "differ"));
}

// Closed-form layer sum for the SqueezeNet v1.1 backbone with the dense head.
std::size_t closed_form_params(std::size_t classes) {
  auto conv = [](std::size_t k, std::size_t in, std::size_t out) { return k * k * in * out + out; };
  auto fire = [&](std::size_t in, std::size_t s, std::size_t e) { return conv(1, in, s) + conv(1, s, e) + conv(3, s, e); };
  return conv(3, 3, 64) + fire(64, 16, 64) + fire(128, 16, 64) + fire(128, 32, 128) + fire(256, 32, 128) +
         fire(256, 48, 192) + fire(384, 48, 192) + fire(384, 64, 256) + fire(512, 64, 256) + 512 * 512 + 512 +
         512 * classes + classes;
}

Outcome param_count() {
  // Also produced by tests/oracles/param_count.py.
  constexpr std::size_t kOracle = 997464;
  std::string out;
  const int code = run_cli({"inspect", "--arch-only"}, &out);
  const std::string want = "total_parameters " + std::to_string(kOracle);
  const bool ok = code == 0 && out.find(want) != std::string::npos && closed_form_params(24) == kOracle;
  const auto at = out.rfind("total_parameters ");
  const std::string reported = at == std::string::npos ? "nothing" : out.substr(at + 17, out.find('\n', at) - at - 17);
  return pass_if(ok, "inspect total " + reported + ", closed form " + std::to_string(closed_form_params(24)) +
                         ", oracle " + std::to_string(kOracle));
}

Outcome metrics_machinery() {
  const std::vector<double> a{1, 2, 3}, b{2, 4, 7};
  const double r = pearson_correlation(a, b);
  const std::vector<double> c{1, 2, 3, 4, 5}, d{5, 4, 3, 2, 1};
  const double r2 = pearson_correlation(c, d);

  const Dataset data = color_dataset(3, 7, 32, 4);
  const Model model = build_model(tiny_config(3, 32), 4);
  Preprocessor pre;
  pre.input_size = 32;
  pre.means = data.channel_means;
  const Evaluation e = evaluate(model, data, pre, 5);
  std::size_t total = 0, trace = 0;
  for (std::size_t i = 0; i < e.confusion.size(); ++i) {
    for (std::size_t j = 0; j < e.confusion.size(); ++j) total += e.confusion[i][j];
    trace += e.confusion[i][i];
  }
  const bool ok = std::abs(r - 0.9934) < 1e-4 && std::abs(r2 + 1.0) < 1e-4 && total == data.size() &&
                  e.total == data.size() && std::abs(e.accuracy - double(trace) / double(total)) < 1e-12;
  return pass_if(ok, "r([1,2,3],[2,4,7]) = " + fmt("%.6f", r) + " (hand 0.9934), r(ascending, descending) = " +
                         fmt("%.6f", r2) + ", confusion total " + std::to_string(total) + " of " +
                         std::to_string(data.size()));
}

Outcome real_dataset() {
  const char* root = std::getenv("FSQ_ASL_DATASET");
  if (!root || !*root) return {Status::Skip, "set FSQ_ASL_DATASET to a class-per-directory image set"};
  TempDir dir;
  const auto out = dir / "asl.fsq";
  const int code = run_cli({"train", "--data", root, "--out", out.string(), "--epochs", "10"});
  if (code != 0) return {Status::Fail, "train exited with " + std::to_string(code)};
  std::ifstream metrics(out.string() + ".metrics.jsonl");
  std::string line;
  std::getline(metrics, line);
  double best = 0.0, last = 0.0;
  while (std::getline(metrics, line)) {
    last = nlohmann::json::parse(line)["val_acc"].get<double>();
    best = std::max(best, last);
  }
  return pass_if(best - last <= 0.02, "final val acc " + fmt("%.4f", last) + ", best " + fmt("%.4f", best));
}

}  // namespace

int main() {
  const std::vector<std::tuple<const char*, Outcome (*)(), double>> criteria{
      {"1 full-scale results", full_scale, 0},
      {"2 gradient correctness", gradients, 60},
      {"3 convolution oracle equivalence", conv_oracle, 30},
      {"4 loss analytics", loss_analytics, 0},
      {"5 end-to-end overfit", overfit, 120},
      {"5 overfit seed robustness", overfit_seed_rate, 0},
      {"6 checkpoint round trip", checkpoint_round_trip, 0},
      {"7 determinism", determinism, 0},
      {"8 parameter-count oracle", param_count, 0},
      {"9 metrics machinery", metrics_machinery, 0},
      {"10 real dataset plateau", real_dataset, 0},
  };
  int failures = 0;
  for (const auto& [name, fn, budget] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (budget > 0 && secs >= budget && o.status == Status::Pass) {
      o = {Status::Fail, o.detail + "; over the " + fmt("%.0f", budget) + " s budget"};
    }
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL"
                      : o.status == Status::Skip ? "SKIP" : "INFO";
    failures += o.status == Status::Fail;
    std::cout << tag << "  " << name << ": " << o.detail << " [" << fmt("%.2f", secs);
    if (budget > 0) std::cout << " s, limit " << fmt("%.0f", budget);
    std::cout << " s]\n" << std::flush;
  }
  std::cout << (failures ? "FAIL" : "PASS") << "  overall: " << failures << " failing criteria\n";
  return failures ? 1 : 0;
}
