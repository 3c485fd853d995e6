#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fsq/data.hpp"
#include "fsq/rng.hpp"

namespace fsq::testing {

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    Rng rng(static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)) ^
            static_cast<std::uint64_t>(std::filesystem::file_time_type::clock::now().time_since_epoch().count()));
    path_ = std::filesystem::temp_directory_path() / ("fsq-test-" + std::to_string(rng.next()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ImageBuffer solid_image(int w, int h, std::array<std::uint8_t, 3> rgb) {
  ImageBuffer img(w, h);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = rgb[0];
    img.pixels[i + 1] = rgb[1];
    img.pixels[i + 2] = rgb[2];
  }
  return img;
}

inline ImageBuffer random_image(int w, int h, Rng& rng) {
  ImageBuffer img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

inline const std::vector<std::array<std::uint8_t, 3>>& class_colors() {
  static const std::vector<std::array<std::uint8_t, 3>> colors{
      {220, 30, 30}, {30, 30, 220}, {30, 200, 40}, {230, 220, 40}};
  return colors;
}

/// Class k of the colors/shape synthetic set: a noisy solid color with a
/// bright square at a random position.
inline ImageBuffer color_image(std::size_t k, int size, Rng& rng) {
  ImageBuffer img = solid_image(size, size, class_colors()[k]);
  for (auto& p : img.pixels) {
    const int v = static_cast<int>(p) + static_cast<int>(rng.below(41)) - 20;
    p = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
  }
  const int side = size / 4;
  const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - side)));
  const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - side)));
  for (int y = oy; y < oy + side; ++y)
    for (int x = ox; x < ox + side; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 250;
  return img;
}

inline const char* class_dir_name(std::size_t k) {
  static const char* names[] = {"a", "b", "c", "d"};
  return names[k];
}

/// In-memory colors/shape set with channel means filled in.
inline Dataset color_dataset(std::size_t classes, std::size_t per_class, int size, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  for (std::size_t k = 0; k < classes; ++k) {
    ds.label_names.push_back(class_dir_name(k));
    for (std::size_t i = 0; i < per_class; ++i) ds.samples.push_back(Sample{color_image(k, size, rng), k, ""});
  }
  ds.channel_means = compute_channel_means(ds);
  return ds;
}

/// Writes the same images as color_dataset to <root>/<a|b|c|d>/img_<i>.ppm.
inline void write_color_dataset(const std::filesystem::path& root, std::size_t classes,
                                std::size_t per_class, int size, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t k = 0; k < classes; ++k) {
    const auto dir = root / class_dir_name(k);
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < per_class; ++i) {
      write_ppm(color_image(k, size, rng), dir / ("img_" + std::to_string(i) + ".ppm"));
    }
  }
}

}  // namespace fsq::testing
