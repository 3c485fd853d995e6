#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include "fsq/data.hpp"
#include "fsq/error.hpp"
#include "fsq/rng.hpp"

namespace fsq {

void AugmentConfig::validate() const {
  if (max_rotation_deg < 0.0f || brightness_jitter < 0.0f) {
    throw ConfigError("augmentation ranges must be non-negative");
  }
  if (!(scale_min > 0.0f) || scale_max > 1.0f || scale_min > scale_max) {
    throw ConfigError("scale jitter range must satisfy 0 < min <= max <= 1");
  }
  if (brightness_jitter >= 1.0f) throw ConfigError("brightness jitter must be < 1");
}

namespace {

std::uint8_t to_pixel(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

// Bilinear sample at (sx, sy) with coordinates clamped to the image.
double sample_bilinear(const ImageBuffer& img, double sx, double sy, int c) {
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = sx - x0;
  const double fy = sy - y0;
  const double top = img.at(x0, y0, c) * (1.0 - fx) + img.at(x1, y0, c) * fx;
  const double bottom = img.at(x0, y1, c) * (1.0 - fx) + img.at(x1, y1, c) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

ImageBuffer crop(const ImageBuffer& img, int x0, int y0, int w, int h) {
  ImageBuffer out(w, h);
  for (int y = 0; y < h; ++y) {
    const auto* src = &img.pixels[(static_cast<std::size_t>(y0 + y) * img.width + x0) * 3];
    std::copy_n(src, static_cast<std::size_t>(w) * 3, &out.pixels[static_cast<std::size_t>(y) * w * 3]);
  }
  return out;
}

ImageBuffer rotate(const ImageBuffer& img, double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
  ImageBuffer out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = to_pixel(sample_bilinear(img, sx, sy, c));
    }
  }
  return out;
}

}  // namespace

ImageBuffer resize_bilinear(const ImageBuffer& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ShapeError("resize target dims must be >= 1");
  if (img.width < 1 || img.height < 1) throw ShapeError("cannot resize an empty image");
  const double scale_x = static_cast<double>(img.width) / out_w;
  const double scale_y = static_cast<double>(img.height) / out_h;
  ImageBuffer out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const double sy = (y + 0.5) * scale_y - 0.5;
    for (int x = 0; x < out_w; ++x) {
      const double sx = (x + 0.5) * scale_x - 0.5;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = to_pixel(sample_bilinear(img, sx, sy, c));
    }
  }
  return out;
}

Tensor normalize(const ImageBuffer& img, const ChannelMeans& means) {
  for (float m : means) {
    if (!(m >= 0.0f && m <= 1.0f)) throw DataError("channel means must lie in [0, 1]");
  }
  const std::size_t h = static_cast<std::size_t>(img.height);
  const std::size_t w = static_cast<std::size_t>(img.width);
  Tensor out(Shape{3, h, w}, 0.0f);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        out[(c * h + y) * w + x] = static_cast<float>(img.pixels[(y * w + x) * 3 + c]) / 255.0f - means[c];
      }
    }
  }
  return out;
}

ChannelMeans compute_channel_means(const Dataset& dataset) {
  if (dataset.samples.empty()) throw DataError("cannot compute channel means of an empty dataset");
  std::array<double, 3> sums{0.0, 0.0, 0.0};
  std::size_t pixels = 0;
  for (const auto& s : dataset.samples) {
    const auto& px = s.image.pixels;
    for (std::size_t i = 0; i < px.size(); i += 3) {
      sums[0] += px[i];
      sums[1] += px[i + 1];
      sums[2] += px[i + 2];
    }
    pixels += px.size() / 3;
  }
  if (pixels == 0) throw DataError("dataset contains no pixels");
  ChannelMeans means{};
  for (int c = 0; c < 3; ++c) means[c] = static_cast<float>(sums[c] / (255.0 * pixels));
  return means;
}

ImageBuffer flip_horizontal(const ImageBuffer& img) {
  ImageBuffer out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
    }
  }
  return out;
}

ImageBuffer augment(const ImageBuffer& img, const AugmentConfig& config, std::uint64_t seed) {
  if (!config.enabled) return img;
  config.validate();
  Rng rng(seed);

  const double scale = rng.uniform(config.scale_min, config.scale_max);
  const int crop_w = std::clamp(static_cast<int>(std::lround(scale * img.width)), 1, img.width);
  const int crop_h = std::clamp(static_cast<int>(std::lround(scale * img.height)), 1, img.height);
  const int crop_x = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width - crop_w + 1)));
  const int crop_y = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height - crop_h + 1)));
  const double angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
  const double brightness = rng.uniform(1.0 - config.brightness_jitter, 1.0 + config.brightness_jitter);
  const bool flip = rng.uniform() < 0.5;

  ImageBuffer out = img;
  if (crop_w != img.width || crop_h != img.height) {
    out = resize_bilinear(crop(img, crop_x, crop_y, crop_w, crop_h), img.width, img.height);
  }
  if (angle != 0.0) out = rotate(out, angle);
  if (brightness != 1.0) {
    for (auto& p : out.pixels) p = to_pixel(p * brightness);
  }
  if (config.horizontal_flip && flip) out = flip_horizontal(out);
  return out;
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir, bool directories) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (directories ? entry.is_directory() : entry.is_regular_file()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& root, const LoadOptions& options) {
  auto warn = options.warn ? options.warn
                           : [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) {
    throw DataError("dataset root " + root.string() + " is not a directory");
  }
  const auto class_dirs = sorted_entries(root, true);
  if (class_dirs.size() < 2) {
    throw DataError("dataset root " + root.string() + " needs at least 2 class directories, found " +
                    std::to_string(class_dirs.size()));
  }
  const auto exts = supported_extensions();

  Dataset ds;
  for (const auto& dir : class_dirs) {
    const std::size_t label = ds.label_names.size();
    ds.label_names.push_back(dir.filename().string());
    std::size_t loaded = 0;
    for (const auto& file : sorted_entries(dir, false)) {
      const auto ext = lower(file.extension().string());
      if (std::find(exts.begin(), exts.end(), ext) == exts.end()) continue;
      try {
        ImageBuffer img = load_image(file);
        if (options.resize_to) img = resize_bilinear(img, *options.resize_to, *options.resize_to);
        ds.samples.push_back(Sample{std::move(img), label, file.string()});
        ++loaded;
      } catch (const DecodeError& e) {
        warn(std::string("skipping undecodable image ") + e.what());
      }
    }
    if (loaded == 0) {
      throw DataError("class directory " + dir.string() + " contains no decodable images");
    }
  }
  return ds;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::pair<Dataset, Dataset> shuffle_split(const Dataset& dataset, std::uint64_t seed,
                                          double val_fraction) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must be in (0, 1)");
  }
  const std::size_t k = dataset.num_classes();
  std::vector<std::size_t> counts(k, 0);
  for (const auto& s : dataset.samples) {
    if (s.label >= k) throw DataError("sample label out of range: " + s.source_path);
    ++counts[s.label];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] < 2) {
      throw DataError("class '" + dataset.label_names[c] + "' has " + std::to_string(counts[c]) +
                      " sample(s); at least 2 are needed to appear in both splits");
    }
  }

  // Largest-remainder apportionment of round(f * N) validation slots.
  const std::size_t n = dataset.size();
  const auto total = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(val_fraction * n)), k, n - k);
  std::vector<std::size_t> quota(k);
  std::vector<double> ideal(k);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    ideal[c] = val_fraction * static_cast<double>(counts[c]);
    quota[c] = std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(ideal[c])), 1, counts[c] - 1);
    assigned += quota[c];
  }
  while (assigned < total) {
    std::size_t best = k;
    for (std::size_t c = 0; c < k; ++c) {
      if (quota[c] + 1 >= counts[c]) continue;
      if (best == k || ideal[c] - quota[c] > ideal[best] - quota[best]) best = c;
    }
    if (best == k) break;
    ++quota[best];
    ++assigned;
  }
  while (assigned > total) {
    std::size_t best = k;
    for (std::size_t c = 0; c < k; ++c) {
      if (quota[c] <= 1) continue;
      if (best == k || ideal[c] - quota[c] < ideal[best] - quota[best]) best = c;
    }
    if (best == k) break;
    --quota[best];
    --assigned;
  }

  Dataset train, val;
  train.label_names = val.label_names = dataset.label_names;
  train.channel_means = val.channel_means = dataset.channel_means;
  std::vector<std::size_t> taken(k, 0);
  for (std::size_t i : permutation(n, seed)) {
    const auto& s = dataset.samples[i];
    if (taken[s.label] < quota[s.label]) {
      ++taken[s.label];
      val.samples.push_back(s);
    } else {
      train.samples.push_back(s);
    }
  }
  return {std::move(train), std::move(val)};
}

}  // namespace fsq
