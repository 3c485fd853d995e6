#include "fsq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include <json.hpp>

#include "fsq/error.hpp"

namespace fsq {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'F', 'S', 'Q', '1'};
// magic + version + total_length
constexpr std::size_t kPreambleSize = 4 + 4 + 8;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated at offset " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

json config_to_json(const ModelConfig& c) {
  json fires = json::array();
  for (const auto& f : c.fire_specs) fires.push_back({f.squeeze_1x1, f.expand_1x1, f.expand_3x3});
  json j;
  j["variant"] = c.variant;
  j["num_classes"] = c.num_classes;
  j["input_size"] = c.input_size;
  j["stem_channels"] = c.stem_channels;
  j["fire_specs"] = fires;
  j["pool_after"] = c.pool_after;
  j["head_hidden"] = c.head_hidden;
  j["dropout_rate"] = c.dropout_rate;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.variant = j.at("variant").get<std::string>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.input_size = j.at("input_size").get<std::size_t>();
  c.stem_channels = j.at("stem_channels").get<std::size_t>();
  c.fire_specs.clear();
  for (const auto& f : j.at("fire_specs")) {
    if (!f.is_array() || f.size() != 3) throw FormatError("fire spec entries must be [s, e1, e3]");
    c.fire_specs.push_back({f[0].get<std::size_t>(), f[1].get<std::size_t>(), f[2].get<std::size_t>()});
  }
  c.pool_after = j.at("pool_after").get<std::vector<std::size_t>>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<float>();
  return c;
}

json history_to_json(const History& h) {
  json arr = json::array();
  for (const auto& m : h.epochs) {
    json e;
    e["epoch"] = m.epoch;
    e["train_loss"] = m.train_loss;
    e["train_acc"] = m.train_accuracy;
    e["val_acc"] = m.val_accuracy;
    e["seconds"] = m.wall_time;
    arr.push_back(std::move(e));
  }
  return arr;
}

History history_from_json(const json& j) {
  History h;
  for (const auto& e : j) {
    h.append(EpochMetrics{e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                          e.at("train_acc").get<double>(), e.at("val_acc").get<double>(),
                          e.at("seconds").get<double>()});
  }
  return h;
}

}  // namespace

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed large buffers in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const History& history,
                                            const ChannelMeans& channel_means,
                                            const std::vector<std::string>& label_names) {
  if (label_names.size() != model.config().num_classes) {
    throw CompatibilityError("label map has " + std::to_string(label_names.size()) +
                             " names for a " + std::to_string(model.config().num_classes) +
                             "-class model");
  }
  json cfg;
  cfg["model"] = config_to_json(model.config());
  cfg["channel_means"] = channel_means;
  cfg["label_names"] = label_names;

  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(0);  // total_length, patched below
  w.text(cfg.dump());
  w.u32(static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    w.text(p.name);
    const auto& dims = p.value.shape().dims();
    w.u32(static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.value.data()) w.f32(v);
  }
  w.text(history_to_json(history).dump());

  auto& buf = w.buffer();
  const std::uint64_t total = buf.size() + 4;
  for (int i = 0; i < 8; ++i) buf[8 + i] = static_cast<std::uint8_t>(total >> (8 * i));
  w.u32(crc32_ieee(buf));
  return std::move(buf);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreambleSize + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  Reader r(bytes);
  r.u32();  // magic
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (reader supports " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (crc32_ieee(body) != tail.u32()) throw CorruptionError("checkpoint CRC mismatch");
  if (r.u64() != bytes.size()) throw FormatError("checkpoint length field disagrees with file size");

  json cfg;
  ModelConfig config;
  Checkpoint out{Model(tiny_config()), {}, {}, {}};
  try {
    cfg = json::parse(r.text());
    config = config_from_json(cfg.at("model"));
    const auto means = cfg.at("channel_means").get<std::vector<float>>();
    if (means.size() != 3) throw FormatError("channel_means must have 3 entries");
    std::copy(means.begin(), means.end(), out.channel_means.begin());
    out.label_names = cfg.at("label_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config block: ") + e.what());
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw CompatibilityError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (out.label_names.size() != config.num_classes) {
    throw CompatibilityError("checkpoint label map size does not match num_classes");
  }

  Model model(config);
  const std::uint32_t count = r.u32();
  if (count != model.parameters().size()) {
    throw CompatibilityError("checkpoint holds " + std::to_string(count) + " tensors, config expects " +
                             std::to_string(model.parameters().size()));
  }
  std::vector<std::string> seen;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = r.text();
    const std::uint32_t ndim = r.u32();
    if (ndim < 1 || ndim > Shape::kMaxRank) throw FormatError("tensor '" + name + "' has bad rank");
    std::vector<std::size_t> dims(ndim);
    for (auto& d : dims) d = r.u32();
    Shape shape{[&] {
      try {
        return Shape(dims);
      } catch (const ShapeError& e) {
        throw FormatError("tensor '" + name + "': " + e.what());
      }
    }()};
    r.need(shape.numel() * 4);
    std::vector<float> values(shape.numel());
    for (auto& v : values) v = r.f32();
    if (!model.has_parameter(name)) {
      throw CompatibilityError("checkpoint tensor '" + name + "' is not a parameter of the configured model");
    }
    if (std::find(seen.begin(), seen.end(), name) != seen.end()) {
      throw FormatError("duplicate tensor '" + name + "'");
    }
    seen.push_back(name);
    model.set_param(name, Tensor(std::move(shape), std::move(values)));
  }

  try {
    out.history = history_from_json(json::parse(r.text()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint history block: ") + e.what());
  } catch (const StateError& e) {
    throw FormatError(std::string("checkpoint history block: ") + e.what());
  }
  if (r.pos() != body.size()) throw FormatError("trailing bytes before checkpoint CRC");
  out.model = std::move(model);
  return out;
}

void save_checkpoint(const Model& model, const History& history, const ChannelMeans& channel_means,
                     const std::vector<std::string>& label_names, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model, history, channel_means, label_names);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into place at " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path.string());
  return decode_checkpoint(bytes);
}

}  // namespace fsq
