#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fsq/tensor.hpp"

namespace fsq {

/// 8-bit RGB image, row-major, interleaved channels.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

using ChannelMeans = std::array<float, 3>;

struct Sample {
  ImageBuffer image;
  std::size_t label = 0;
  std::string source_path;
};

struct Dataset {
  std::vector<Sample> samples;
  /// Class names in label order.
  std::vector<std::string> label_names;
  ChannelMeans channel_means{0.0f, 0.0f, 0.0f};

  std::size_t size() const { return samples.size(); }
  std::size_t num_classes() const { return label_names.size(); }
};

struct AugmentConfig {
  bool enabled = true;
  float max_rotation_deg = 10.0f;
  /// Crop side as a fraction of the image side, drawn from [scale_min, scale_max].
  float scale_min = 0.9f;
  float scale_max = 1.0f;
  /// Brightness factor drawn from [1 - jitter, 1 + jitter].
  float brightness_jitter = 0.1f;
  bool horizontal_flip = false;

  void validate() const;
};

// --- image I/O ------------------------------------------------------------------

/// Decodes a PPM (P6/P3), PGM (P5/P2, replicated to RGB) or, when built with
/// libpng, a PNG file. Throws DecodeError naming the path.
ImageBuffer load_image(const std::filesystem::path& path);
ImageBuffer decode_pnm(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");
std::vector<std::uint8_t> encode_ppm(const ImageBuffer& img);
void write_ppm(const ImageBuffer& img, const std::filesystem::path& path);
bool png_supported();
/// Extensions load_dataset accepts (lower case, with dot).
std::vector<std::string> supported_extensions();

// --- preprocessing ------------------------------------------------------------

/// Bilinear resize with half-pixel centers: src = (dst + 0.5) * in/out - 0.5,
/// clamped to the image. Results round to nearest.
ImageBuffer resize_bilinear(const ImageBuffer& img, int out_w, int out_h);

/// [3,H,W] tensor with t[c,y,x] = pixel / 255 - means[c].
Tensor normalize(const ImageBuffer& img, const ChannelMeans& means);

/// Per-channel mean of pixel / 255 over every pixel of every sample.
ChannelMeans compute_channel_means(const Dataset& dataset);

/// Scale jitter (random crop resized back), rotation about the center with
/// edge-clamped bilinear sampling, brightness scaling, then optional
/// horizontal flip. All random draws happen in that fixed order, so the
/// result is a pure function of (img, config, seed).
ImageBuffer augment(const ImageBuffer& img, const AugmentConfig& config, std::uint64_t seed);

ImageBuffer flip_horizontal(const ImageBuffer& img);

// --- datasets --------------------------------------------------------------------

struct LoadOptions {
  /// Resize every image to size x size as it is loaded.
  std::optional<int> resize_to;
  /// Receives a message for each skipped file. Defaults to standard error.
  std::function<void(const std::string&)> warn;
};

/// Loads <root>/<class>/<image>. Classes are the subdirectories in byte-wise
/// lexicographic order; files within a class are read in name order.
Dataset load_dataset(const std::filesystem::path& root, const LoadOptions& options = {});

/// Stratified, seeded split. The whole dataset is permuted with Fisher-Yates,
/// then the first quota[k] samples of class k (in permuted order) go to the
/// validation set. Quotas total round(val_fraction * N), are apportioned by
/// largest remainder, and leave every class at least one sample on each side.
std::pair<Dataset, Dataset> shuffle_split(const Dataset& dataset, std::uint64_t seed,
                                          double val_fraction);

/// Fisher-Yates permutation of [0, n) driven by Rng(seed).
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

}  // namespace fsq
