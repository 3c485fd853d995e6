#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>

#include "fsq/data.hpp"
#include "fsq/error.hpp"

#ifdef FSQ_HAVE_PNG
#include <png.h>
#endif

namespace fsq {

ImageBuffer::ImageBuffer(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {
  if (w < 1 || h < 1) throw ShapeError("image dims must be >= 1");
}

namespace {

class PnmReader {
 public:
  PnmReader(std::span<const std::uint8_t> bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  [[noreturn]] void fail(const std::string& why) const {
    throw DecodeError(origin_ + ": " + why);
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned read_uint() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("malformed header");
    unsigned long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1u << 24) fail("header value out of range");
    }
    return static_cast<unsigned>(v);
  }

  std::uint8_t byte() {
    if (pos_ >= bytes_.size()) fail("truncated pixel data");
    return bytes_[pos_++];
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::uint8_t scale_sample(unsigned v, unsigned maxval) {
  if (maxval == 255) return static_cast<std::uint8_t>(v);
  return static_cast<std::uint8_t>((v * 255u + maxval / 2) / maxval);
}

}  // namespace

ImageBuffer decode_pnm(std::span<const std::uint8_t> bytes, const std::string& origin) {
  PnmReader r(bytes, origin);
  if (bytes.size() < 2 || bytes[0] != 'P') r.fail("not a PNM file");
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    r.fail(std::string("unsupported PNM type P") + kind);
  }
  r.advance(2);
  const unsigned width = r.read_uint();
  const unsigned height = r.read_uint();
  const unsigned maxval = r.read_uint();
  if (width == 0 || height == 0) r.fail("zero image dimension");
  if (maxval == 0 || maxval > 65535) r.fail("invalid maxval");
  const bool binary = kind == '5' || kind == '6';
  const bool gray = kind == '2' || kind == '5';
  const std::size_t channels = gray ? 1 : 3;
  const std::size_t samples = static_cast<std::size_t>(width) * height * channels;

  std::vector<std::uint8_t> raw(samples);
  if (binary) {
    // Exactly one whitespace byte separates the header from the raster.
    if (r.remaining() < 1) r.fail("truncated header");
    r.advance(1);
    const std::size_t bytes_per = maxval > 255 ? 2 : 1;
    if (r.remaining() < samples * bytes_per) r.fail("truncated pixel data");
    for (std::size_t i = 0; i < samples; ++i) {
      unsigned v = r.byte();
      if (bytes_per == 2) v = (v << 8) | r.byte();
      if (v > maxval) r.fail("sample exceeds maxval");
      raw[i] = scale_sample(v, maxval);
    }
  } else {
    for (std::size_t i = 0; i < samples; ++i) {
      const unsigned v = r.read_uint();
      if (v > maxval) r.fail("sample exceeds maxval");
      raw[i] = scale_sample(v, maxval);
    }
  }

  ImageBuffer img(static_cast<int>(width), static_cast<int>(height));
  if (gray) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = raw[i];
    }
  } else {
    img.pixels = std::move(raw);
  }
  return img;
}

#ifdef FSQ_HAVE_PNG
namespace {

ImageBuffer decode_png(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError(origin + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  ImageBuffer img(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError(origin + ": " + msg);
  }
  return img;
}

}  // namespace
#endif

bool png_supported() {
#ifdef FSQ_HAVE_PNG
  return true;
#else
  return false;
#endif
}

std::vector<std::string> supported_extensions() {
  std::vector<std::string> exts{".ppm", ".pgm", ".pnm"};
  if (png_supported()) exts.emplace_back(".png");
  return exts;
}

ImageBuffer load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError(path.string() + ": cannot open file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw DecodeError(path.string() + ": read failure");
  static constexpr std::uint8_t kPngMagic[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(std::begin(kPngMagic), std::end(kPngMagic), bytes.begin())) {
#ifdef FSQ_HAVE_PNG
    return decode_png(bytes, path.string());
#else
    throw DecodeError(path.string() + ": PNG support not compiled in");
#endif
  }
  return decode_pnm(bytes, path.string());
}

std::vector<std::uint8_t> encode_ppm(const ImageBuffer& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

void write_ppm(const ImageBuffer& img, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace fsq
