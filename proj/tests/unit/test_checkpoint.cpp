#include <doctest.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "fixtures.hpp"
#include "fsq/checkpoint.hpp"
#include "fsq/error.hpp"
#include "reference.hpp"

using namespace fsq;
using namespace fsq::testing;

namespace {

// Bitwise reflected CRC-32, polynomial 0xEDB88320.
std::uint32_t crc32_bitwise(const std::vector<std::uint8_t>& bytes) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::uint8_t b : bytes) {
    crc ^= b;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

// Byte-level writer following the documented layout, independent of the
// library encoder.
struct FileBuilder {
  std::vector<std::uint8_t> b;

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    b.insert(b.end(), s.begin(), s.end());
  }
  void tensor(const std::string& name, const Tensor& t) {
    text(name);
    u32(static_cast<std::uint32_t>(t.shape().rank()));
    for (std::size_t d : t.shape().dims()) u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) u32(std::bit_cast<std::uint32_t>(v));
  }
};

std::vector<std::uint8_t> build_file(const std::string& config_json,
                                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                                     const std::string& history_json, std::uint32_t version = 1) {
  FileBuilder f;
  f.b = {'F', 'S', 'Q', '1'};
  f.u32(version);
  f.u64(0);
  f.text(config_json);
  f.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) f.tensor(name, t);
  f.text(history_json);
  const std::uint64_t total = f.b.size() + 4;
  for (int i = 0; i < 8; ++i) f.b[8 + i] = static_cast<std::uint8_t>(total >> (8 * i));
  f.u32(crc32_bitwise(f.b));
  return f.b;
}

std::string config_block(const std::vector<std::uint8_t>& file) {
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(file[16 + i]) << (8 * i);
  return std::string(file.begin() + 20, file.begin() + 20 + len);
}

std::vector<std::pair<std::string, Tensor>> named_tensors(const Model& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.name, p.value);
  return out;
}

History sample_history() {
  History h;
  h.append(EpochMetrics{1, 0.9, 0.55, 0.5, 1.25});
  h.append(EpochMetrics{2, 0.1 + 0.2, 0.875, 0.8329, 0.0});
  return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

const std::vector<std::string> kLabels{"a", "b", "c"};
const ChannelMeans kMeans{0.25f, 0.5f, 0.125f};

}  // namespace

TEST_CASE("CRC-32 matches the bitwise reference") {
  const std::string check = "123456789";
  CHECK(crc32_ieee(std::vector<std::uint8_t>(check.begin(), check.end())) == 0xCBF43926u);
  Rng rng(61);
  for (int i = 0; i < 20; ++i) {
    std::vector<std::uint8_t> v(rng.below(2000));
    for (auto& x : v) x = static_cast<std::uint8_t>(rng.below(256));
    CHECK(crc32_ieee(v) == crc32_bitwise(v));
  }
}

TEST_CASE("encoder output matches the documented layout byte for byte") {
  const Model model = build_model(tiny_config(3, 32), 62);
  const History h = sample_history();
  const auto bytes = encode_checkpoint(model, h, kMeans, kLabels);

  const auto cfg = nlohmann::json::parse(config_block(bytes));
  CHECK(cfg["model"]["variant"] == "tiny");
  CHECK(cfg["model"]["num_classes"] == 3);
  CHECK(cfg["label_names"] == nlohmann::json(kLabels));
  CHECK(cfg["channel_means"][1] == 0.5);

  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (const auto& e : h.epochs) {
    hist.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"train_acc", e.train_accuracy},
                    {"val_acc", e.val_accuracy},
                    {"seconds", e.wall_time}});
  }
  CHECK(bytes == build_file(config_block(bytes), named_tensors(model), hist.dump()));
}

TEST_CASE("round trip") {
  const Model model = build_model(tiny_config(3, 32), 63);
  const History h = sample_history();
  TempDir dir;
  const auto path = dir / "model.fsq";
  save_checkpoint(model, h, kMeans, kLabels, path);
  CHECK_FALSE(std::filesystem::exists(dir / "model.fsq.tmp"));

  const Checkpoint c = load_checkpoint(path);
  CHECK(c.model.config() == model.config());
  CHECK(c.history == h);
  CHECK(c.channel_means == kMeans);
  CHECK(c.label_names == kLabels);
  REQUIRE(c.model.parameters().size() == model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& a = model.parameters()[i].value;
    const auto& b = c.model.parameters()[i].value;
    CHECK(a.shape() == b.shape());
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0);
  }

  Rng rng(64);
  const Tensor x = random_tensor(Shape{3, 3, 32, 32}, rng, -0.5, 0.5);
  const Tensor before = model.predict(x), after = c.model.predict(x);
  CHECK(std::memcmp(before.data().data(), after.data().data(), before.numel() * sizeof(float)) == 0);

  // Saving twice gives identical bytes; the loaded copy re-encodes identically.
  save_checkpoint(model, h, kMeans, kLabels, dir / "again.fsq");
  CHECK(read_file(path) == read_file(dir / "again.fsq"));
  CHECK(encode_checkpoint(c.model, c.history, c.channel_means, c.label_names) == read_file(path));
}

TEST_CASE("default model checkpoint size") {
  const Model model(squeezenet_v11_config());
  const auto bytes = encode_checkpoint(model, History{}, kMeans, std::vector<std::string>(24, "x"));
  const std::size_t payload = 4 * model.parameter_count();
  CHECK(bytes.size() > payload);
  CHECK(bytes.size() - payload < 64 * 1024);
}

TEST_CASE("corruption and format errors") {
  const Model model = build_model(tiny_config(3, 32), 65);
  const auto good = encode_checkpoint(model, sample_history(), kMeans, kLabels);
  CHECK_NOTHROW(decode_checkpoint(good));

  SUBCASE("every single-byte flip after the header is detected") {
    Rng rng(66);
    for (int i = 0; i < 200; ++i) {
      auto bad = good;
      const std::size_t pos = 8 + rng.below(bad.size() - 8);
      bad[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));
      CHECK_THROWS_AS(decode_checkpoint(bad), CorruptionError);
    }
  }
  SUBCASE("payload byte flip") {
    auto bad = good;
    bad[bad.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(decode_checkpoint(bad), CorruptionError);
  }
  SUBCASE("bad magic") {
    auto bad = good;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    CHECK_THROWS_AS(decode_checkpoint(std::vector<std::uint8_t>{'F', 'S'}), FormatError);
  }
  SUBCASE("newer version") {
    const auto v2 = build_file(config_block(good), named_tensors(model), "[]", 2);
    try {
      decode_checkpoint(v2);
      FAIL("expected FormatError");
    } catch (const CorruptionError&) {
      FAIL("version must be checked before the CRC");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }
  SUBCASE("truncated file") {
    std::vector<std::uint8_t> cut(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(good.size() / 2));
    CHECK_THROWS_AS(decode_checkpoint(cut), FormatError);
  }
  SUBCASE("shape mismatch against the embedded config") {
    auto tensors = named_tensors(model);
    tensors[0].second = Tensor(Shape{1, 1, 1, 1}, 0.0f);
    CHECK_THROWS_AS(decode_checkpoint(build_file(config_block(good), tensors, "[]")), CompatibilityError);
  }
  SUBCASE("missing tensor") {
    auto tensors = named_tensors(model);
    tensors.pop_back();
    CHECK_THROWS_AS(decode_checkpoint(build_file(config_block(good), tensors, "[]")), CompatibilityError);
  }
  SUBCASE("unknown tensor name") {
    auto tensors = named_tensors(model);
    tensors[1].first = "conv9/weight";
    CHECK_THROWS_AS(decode_checkpoint(build_file(config_block(good), tensors, "[]")), CompatibilityError);
  }
  SUBCASE("duplicate tensor") {
    auto tensors = named_tensors(model);
    tensors[1] = tensors[0];
    CHECK_THROWS_AS(decode_checkpoint(build_file(config_block(good), tensors, "[]")), FormatError);
  }
  SUBCASE("label map size") {
    auto cfg = nlohmann::ordered_json::parse(config_block(good));
    cfg["label_names"] = {"a", "b"};
    CHECK_THROWS_AS(decode_checkpoint(build_file(cfg.dump(), named_tensors(model), "[]")), CompatibilityError);
  }
  SUBCASE("invalid JSON") {
    CHECK_THROWS_AS(decode_checkpoint(build_file("{", named_tensors(model), "[]")), FormatError);
    CHECK_THROWS_AS(decode_checkpoint(build_file(config_block(good), named_tensors(model), "{")), FormatError);
  }
  SUBCASE("externally produced file with an empty history loads") {
    const Checkpoint c = decode_checkpoint(build_file(config_block(good), named_tensors(model), "[]"));
    CHECK(c.history.epochs.empty());
  }
  CHECK_THROWS_AS(encode_checkpoint(model, History{}, kMeans, {"a"}), CompatibilityError);
}

TEST_CASE("I/O errors") {
  TempDir dir;
  const Model model(tiny_config(3, 32));
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.fsq"), IoError);
  const auto target = dir / "no" / "such" / "dir" / "m.fsq";
  CHECK_THROWS_AS(save_checkpoint(model, History{}, kMeans, kLabels, target), IoError);
  CHECK_FALSE(std::filesystem::exists(target));
}
