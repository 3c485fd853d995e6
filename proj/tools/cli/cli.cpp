#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "fsq/checkpoint.hpp"
#include "fsq/data.hpp"
#include "fsq/error.hpp"
#include "fsq/model.hpp"
#include "fsq/parallel.hpp"
#include "fsq/training.hpp"

namespace fsq::cli {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

const std::vector<std::string> kArchitectures{std::string(kVariantSqueezeNet11),
                                              std::string(kVariantTiny)};

ModelConfig arch_config(const std::string& arch, std::size_t classes, std::size_t image_size) {
  if (arch == kVariantTiny) return tiny_config(classes, image_size);
  if (arch == kVariantSqueezeNet11) return squeezenet_v11_config(classes, image_size);
  throw ConfigError("unknown architecture '" + arch + "'");
}

void configure_threads(bool deterministic) {
  set_num_threads(deterministic ? 1u : std::max(1u, std::thread::hardware_concurrency()));
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += (s.empty() ? "" : ", ") + i;
  return s;
}

struct TrainFlags {
  std::string data;
  std::string out;
  std::string metrics;
  std::string resume;
  std::string arch{kVariantSqueezeNet11};
  std::size_t epochs = 10;
  double lr = 0.001;
  double momentum = 0.9;
  std::size_t batch = 32;
  double val_fraction = 0.1;
  std::size_t image_size = 244;
  std::uint64_t seed = 42;
  bool augment = true;
  bool flip = false;
  bool dropout = false;
  bool deterministic = false;
};

struct EvalFlags {
  std::string checkpoint;
  std::string data;
  std::string confusion;
};

struct PredictFlags {
  std::string checkpoint;
  std::string image;
  std::size_t top = 3;
};

struct InspectFlags {
  std::string checkpoint;
  bool arch_only = false;
  std::string arch{kVariantSqueezeNet11};
  std::size_t image_size = 244;
  std::size_t classes = 24;
  std::string format = "table";
};

json run_header(const TrainFlags& f) {
  json run;
  run["arch"] = f.arch;
  run["data"] = f.data;
  run["epochs"] = f.epochs;
  run["lr"] = f.lr;
  run["momentum"] = f.momentum;
  run["batch"] = f.batch;
  run["val_fraction"] = f.val_fraction;
  run["image_size"] = f.image_size;
  run["seed"] = f.seed;
  run["augment"] = f.augment;
  run["flip"] = f.flip;
  run["dropout"] = f.dropout;
  run["deterministic"] = f.deterministic;
  run["resume"] = f.resume.empty() ? json(nullptr) : json(f.resume);
  json header;
  header["run"] = std::move(run);
  return header;
}

int cmd_train(const TrainFlags& f, std::ostream& out, std::ostream& err) {
  if (f.flip && !f.augment) throw ConfigError("--flip true requires --augment true");
  const fs::path metrics_path = f.metrics.empty() ? fs::path(f.out + ".metrics.jsonl") : fs::path(f.metrics);
  if (fs::weakly_canonical(metrics_path) == fs::weakly_canonical(f.out)) {
    throw ConfigError("--metrics and --out name the same file");
  }
  TrainConfig tc;
  tc.learning_rate = static_cast<float>(f.lr);
  tc.momentum = static_cast<float>(f.momentum);
  tc.batch_size = f.batch;
  tc.epochs = f.epochs;
  tc.seed = f.seed;
  tc.dropout_on = f.dropout;
  tc.val_fraction = f.val_fraction;
  tc.deterministic = f.deterministic;
  tc.validate();
  AugmentConfig aug;
  aug.enabled = f.augment;
  aug.horizontal_flip = f.flip;
  aug.validate();
  ModelConfig mc = arch_config(f.arch, 2, f.image_size);
  mc.validate();

  configure_threads(f.deterministic);

  LoadOptions lo;
  lo.resize_to = static_cast<int>(f.image_size);
  lo.warn = [&err](const std::string& m) { err << "warning: " << m << '\n'; };
  Dataset all = load_dataset(f.data, lo);
  mc.num_classes = all.num_classes();
  auto [train, val] = shuffle_split(all, f.seed, f.val_fraction);
  err << "fsq train: " << all.size() << " images, " << all.num_classes() << " classes ("
      << train.size() << " train / " << val.size() << " val)\n";

  History history;
  ChannelMeans means{};
  std::optional<Model> model;
  if (!f.resume.empty()) {
    Checkpoint ck = load_checkpoint(f.resume);
    if (ck.model.config() != mc) {
      throw CompatibilityError("--resume checkpoint architecture (" + ck.model.config().variant + ", " +
                               std::to_string(ck.model.config().num_classes) + " classes, input " +
                               std::to_string(ck.model.config().input_size) +
                               ") does not match the requested configuration (" + mc.variant + ", " +
                               std::to_string(mc.num_classes) + " classes, input " +
                               std::to_string(mc.input_size) + ")");
    }
    if (ck.label_names != all.label_names) {
      throw CompatibilityError("--resume checkpoint classes [" + join(ck.label_names) +
                               "] differ from dataset classes [" + join(all.label_names) + "]");
    }
    history = std::move(ck.history);
    means = ck.channel_means;
    model.emplace(std::move(ck.model));
  } else {
    means = compute_channel_means(train);
    model.emplace(build_model(mc, f.seed));
  }
  train.channel_means = val.channel_means = means;

  std::ofstream metrics(metrics_path, f.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw IoError("cannot open metrics file " + metrics_path.string());
  metrics << run_header(f).dump() << '\n';

  Preprocessor pre{mc.input_size, means, aug};
  double best_val = -1.0;
  std::optional<Model> best;
  const std::size_t first = history.next_epoch();
  for (std::size_t e = first; e < first + f.epochs; ++e) {
    EpochMetrics m = train_epoch(*model, train, val, tc, e, pre);
    history.append(m);
    const std::string line = metrics_json_line(m);
    out << line << '\n' << std::flush;
    metrics << line << '\n' << std::flush;
    if (!metrics) throw IoError("write failed for metrics file " + metrics_path.string());
    if (m.val_accuracy > best_val) {
      best_val = m.val_accuracy;
      best = *model;
      best->clear_retained();
      save_checkpoint(*best, history, means, all.label_names, f.out);
    }
  }
  // Rewrite the best parameters with the complete history.
  save_checkpoint(*best, history, means, all.label_names, f.out);
  err << "fsq train: best val_acc " << best_val << ", checkpoint written to " << f.out << '\n';
  return kOk;
}

// Maps dataset labels onto checkpoint label indices.
void remap_labels(Dataset& ds, const std::vector<std::string>& checkpoint_labels) {
  std::vector<std::string> unknown;
  std::vector<std::size_t> mapping(ds.label_names.size());
  for (std::size_t i = 0; i < ds.label_names.size(); ++i) {
    auto it = std::find(checkpoint_labels.begin(), checkpoint_labels.end(), ds.label_names[i]);
    if (it == checkpoint_labels.end()) {
      unknown.push_back(ds.label_names[i]);
    } else {
      mapping[i] = static_cast<std::size_t>(it - checkpoint_labels.begin());
    }
  }
  if (!unknown.empty()) {
    throw CompatibilityError("dataset classes not in the checkpoint label map: " + join(unknown) +
                             " (checkpoint has: " + join(checkpoint_labels) + ")");
  }
  for (auto& s : ds.samples) s.label = mapping[s.label];
  ds.label_names = checkpoint_labels;
}

void write_confusion_csv(const fs::path& path, const std::vector<std::string>& labels,
                         const Evaluation& ev) {
  std::ofstream csv(path, std::ios::trunc);
  if (!csv) throw IoError("cannot open " + path.string() + " for writing");
  csv << "true\\predicted";
  for (const auto& l : labels) csv << ',' << l;
  csv << '\n';
  for (std::size_t i = 0; i < labels.size(); ++i) {
    csv << labels[i];
    for (std::size_t j = 0; j < labels.size(); ++j) csv << ',' << ev.confusion[i][j];
    csv << '\n';
  }
  if (!csv) throw IoError("write failed for " + path.string());
}

int cmd_eval(const EvalFlags& f, std::ostream& out, std::ostream& err) {
  Checkpoint ck = load_checkpoint(f.checkpoint);
  const auto& mc = ck.model.config();
  LoadOptions lo;
  lo.resize_to = static_cast<int>(mc.input_size);
  lo.warn = [&err](const std::string& m) { err << "warning: " << m << '\n'; };
  Dataset ds = load_dataset(f.data, lo);
  remap_labels(ds, ck.label_names);
  Preprocessor pre{mc.input_size, ck.channel_means, AugmentConfig{.enabled = false}};
  const Evaluation ev = evaluate(ck.model, ds, pre);
  json result;
  result["accuracy"] = ev.accuracy;
  result["n"] = ev.total;
  out << result.dump() << '\n';
  if (!f.confusion.empty()) write_confusion_csv(f.confusion, ck.label_names, ev);
  return kOk;
}

int cmd_predict(const PredictFlags& f, std::ostream& out, std::ostream&) {
  if (f.top < 1) throw ConfigError("--top must be >= 1");
  Checkpoint ck = load_checkpoint(f.checkpoint);
  const auto& mc = ck.model.config();
  const ImageBuffer img = load_image(f.image);
  Preprocessor pre{mc.input_size, ck.channel_means, AugmentConfig{.enabled = false}};
  const Tensor x = pre(img).reshaped(Shape{1, 3, mc.input_size, mc.input_size});
  const Tensor probs = ck.model.predict(x);
  std::vector<std::size_t> order(mc.num_classes);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs.at(0, a) > probs.at(0, b); });
  const std::size_t top = std::min(f.top, mc.num_classes);
  json result = json::array();
  for (std::size_t i = 0; i < top; ++i) {
    json entry;
    entry["label"] = ck.label_names[order[i]];
    entry["p"] = probs.at(0, order[i]);
    result.push_back(std::move(entry));
  }
  out << result.dump() << '\n';
  return kOk;
}

int cmd_inspect(const InspectFlags& f, std::ostream& out, std::ostream& err) {
  ModelConfig mc;
  if (!f.checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(f.checkpoint);
    mc = ck.model.config();
    err << "checkpoint " << f.checkpoint << ": " << ck.label_names.size() << " classes, "
        << ck.history.epochs.size() << " epochs of history, " << fs::file_size(f.checkpoint)
        << " bytes\n";
  } else {
    mc = arch_config(f.arch, f.classes, f.image_size);
  }
  const auto rows = describe_layers(mc);
  std::size_t total = 0;
  for (const auto& r : rows) total += r.parameters;

  if (f.format == "json") {
    json j;
    j["variant"] = mc.variant;
    j["input_shape"] = {3, mc.input_size, mc.input_size};
    json layers = json::array();
    for (const auto& r : rows) {
      json l;
      l["name"] = r.name;
      l["kind"] = r.kind;
      l["output_shape"] = r.output_shape.dims();
      l["params"] = r.parameters;
      layers.push_back(std::move(l));
    }
    j["layers"] = std::move(layers);
    j["total_parameters"] = total;
    out << j.dump() << '\n';
    return kOk;
  }

  out << "variant " << mc.variant << ", input [3," << mc.input_size << ',' << mc.input_size << "]\n";
  out << std::left << std::setw(10) << "layer" << std::setw(18) << "kind" << std::setw(16)
      << "output" << std::right << std::setw(10) << "params" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << r.name << std::setw(18) << r.kind << std::setw(16)
        << r.output_shape.to_string() << std::right << std::setw(10) << r.parameters << '\n';
  }
  out << "total_parameters " << total << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SqueezeNet image classifier: training, evaluation and prediction", "fsq"};
  app.require_subcommand(1);

  TrainFlags train;
  auto* t = app.add_subcommand("train", "Train a classifier on <data>/<class>/<images>");
  t->add_option("--data", train.data, "Dataset root directory")->required();
  t->add_option("--out", train.out, "Checkpoint path for the best-validation model")->required();
  t->add_option("--metrics", train.metrics, "JSON-lines metrics file (default <out>.metrics.jsonl)");
  t->add_option("--epochs", train.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--lr", train.lr, "SGD learning rate")->capture_default_str();
  t->add_option("--momentum", train.momentum, "SGD momentum")->capture_default_str();
  t->add_option("--batch", train.batch, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--val-fraction", train.val_fraction, "Validation split fraction")->capture_default_str();
  t->add_option("--image-size", train.image_size, "Square model input side")->capture_default_str();
  t->add_option("--seed", train.seed, "Random seed")->capture_default_str();
  t->add_option("--augment", train.augment, "Online augmentation (true/false)")->capture_default_str();
  t->add_option("--flip", train.flip, "Random horizontal flips (true/false)")->capture_default_str();
  t->add_option("--dropout", train.dropout, "Dropout before the output layer (true/false)")->capture_default_str();
  t->add_option("--arch", train.arch, "Network variant")->capture_default_str()->check(CLI::IsMember(kArchitectures));
  t->add_option("--resume", train.resume, "Continue from a checkpoint");
  t->add_flag("--deterministic", train.deterministic, "Single-threaded, bit-reproducible run");

  EvalFlags ev;
  auto* e = app.add_subcommand("eval", "Accuracy and confusion matrix of a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Dataset root directory")->required();
  e->add_option("--confusion", ev.confusion, "Write the confusion matrix as CSV");

  PredictFlags pr;
  auto* p = app.add_subcommand("predict", "Top-N classes for a single image");
  p->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
  p->add_option("--image", pr.image, "Image file (.ppm/.pgm/.png)")->required();
  p->add_option("--top", pr.top, "Number of classes to print")->capture_default_str()->check(CLI::PositiveNumber);

  InspectFlags in;
  auto* i = app.add_subcommand("inspect", "Layer table and parameter count");
  auto* ck_opt = i->add_option("--checkpoint", in.checkpoint, "Describe a checkpoint's model");
  auto* arch_opt = i->add_flag("--arch-only", in.arch_only, "Describe an architecture without weights");
  ck_opt->excludes(arch_opt);
  i->add_option("--arch", in.arch, "Network variant")->capture_default_str()->check(CLI::IsMember(kArchitectures));
  i->add_option("--image-size", in.image_size, "Square model input side")->capture_default_str();
  i->add_option("--classes", in.classes, "Number of output classes")->capture_default_str();
  i->add_option("--format", in.format, "table or json")->capture_default_str()->check(CLI::IsMember({"table", "json"}));

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (i->parsed() && in.checkpoint.empty() && !in.arch_only) {
      throw CLI::RequiredError("inspect needs --checkpoint or --arch-only");
    }
    if (i->parsed() && !in.checkpoint.empty() &&
        (i->count("--arch") || i->count("--image-size") || i->count("--classes"))) {
      throw CLI::ExcludesError("--checkpoint", "--arch/--image-size/--classes");
    }
  } catch (const CLI::ParseError& pe) {
    if (pe.get_exit_code() == 0) return app.exit(pe, out, err);
    const auto subs = app.get_subcommands();
    err << "error: " << pe.what() << "\n\n" << (subs.empty() ? app.help() : subs.front()->help());
    return kUsage;
  }

  try {
    if (t->parsed()) return cmd_train(train, out, err);
    if (e->parsed()) return cmd_eval(ev, out, err);
    if (p->parsed()) return cmd_predict(pr, out, err);
    return cmd_inspect(in, out, err);
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << '\n';
    return kUsage;
  } catch (const IoError& ex) {
    err << "I/O error: " << ex.what() << '\n';
    return kIoError;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << '\n';
    return kDataError;
  } catch (const CompatibilityError& ex) {
    err << "compatibility error: " << ex.what() << '\n';
    return kDataError;
  } catch (const FormatError& ex) {
    err << "checkpoint error: " << ex.what() << '\n';
    return kDataError;
  } catch (const ShapeError& ex) {
    err << "data error: " << ex.what() << '\n';
    return kDataError;
  } catch (const NumericError& ex) {
    err << "numeric error: " << ex.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "I/O error: " << ex.what() << '\n';
    return kIoError;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << '\n';
    return kInternal;
  }
}

}  // namespace fsq::cli
