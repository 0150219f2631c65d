#include "viqa/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace viqa {

namespace fs = std::filesystem;

ImageBuffer::ImageBuffer(int width, int height, int channels, float fill)
    : width_(width), height_(height), channels_(channels) {
  if (width < 0 || height < 0 || channels < 0) {
    throw InputError("image dimensions must be non-negative");
  }
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

namespace {

std::vector<unsigned char> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ImageIoError(ImageIoErrc::io_failure, "cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

float to_unit(unsigned value, unsigned maxval) {
  return static_cast<float>(static_cast<double>(value) / maxval);
}

std::uint8_t to_byte(float v) {
  const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

ImageBuffer decode_png(const std::vector<unsigned char>& bytes, const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageIoError(ImageIoErrc::truncated, path.string() + ": " + msg);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  const int w = static_cast<int>(image.width);
  const int h = static_cast<int>(image.height);
  std::vector<png_byte> raw(PNG_IMAGE_SIZE(image));
  // Alpha is composited onto black.
  png_color background{0, 0, 0};
  if (!png_image_finish_read(&image, &background, raw.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageIoError(ImageIoErrc::truncated, path.string() + ": " + msg);
  }
  ImageBuffer img(w, h, channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        img.at(c, y, x) = to_unit(raw[(static_cast<std::size_t>(y) * w + x) * channels + c], 255);
      }
    }
  }
  return img;
}

// Reads the whitespace/comment separated header fields of a PNM file.
class PnmHeader {
 public:
  explicit PnmHeader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  bool next_int(long& out) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) return false;
    out = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      out = out * 10 + (bytes_[pos_] - '0');
      if (out > 1'000'000'000) return false;
      ++pos_;
    }
    return true;
  }

  // Exactly one whitespace byte separates the header from the raster.
  bool consume_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) return false;
    ++pos_;
    return true;
  }

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

ImageBuffer decode_pnm(const std::vector<unsigned char>& bytes, const fs::path& path) {
  const int channels = bytes[1] == '6' ? 3 : 1;
  PnmHeader header(bytes);
  header.seek(2);
  long w = 0, h = 0, maxval = 0;
  if (!header.next_int(w) || !header.next_int(h) || !header.next_int(maxval) ||
      !header.consume_single_space()) {
    throw ImageIoError(ImageIoErrc::truncated, path.string() + ": malformed PNM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw ImageIoError(ImageIoErrc::unsupported_format, path.string() + ": unsupported PNM geometry");
  }
  const std::size_t bytes_per_sample = maxval > 255 ? 2 : 1;
  const std::size_t samples = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() - header.pos() < samples * bytes_per_sample) {
    throw ImageIoError(ImageIoErrc::truncated, path.string() + ": raster shorter than header declares");
  }
  ImageBuffer img(static_cast<int>(w), static_cast<int>(h), channels);
  const unsigned char* p = bytes.data() + header.pos();
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        unsigned v = *p++;
        if (bytes_per_sample == 2) v = (v << 8) | *p++;
        img.at(c, static_cast<int>(y), static_cast<int>(x)) = to_unit(v, static_cast<unsigned>(maxval));
      }
    }
  }
  return img;
}

void write_png(const ImageBuffer& img, const fs::path& path) {
  const int channels = img.channels();
  std::vector<png_byte> raw(img.size());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < channels; ++c) {
        raw[(static_cast<std::size_t>(y) * img.width() + x) * channels + c] = to_byte(img.at(c, y, x));
      }
    }
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  // Encode to memory first so a failed open never leaves a partial file.
  if (!png_image_write_get_memory_size(image, size, 0, raw.data(), 0, nullptr)) {
    throw ImageIoError(ImageIoErrc::io_failure, path.string() + ": " + image.message);
  }
  std::vector<png_byte> encoded(size);
  if (!png_image_write_to_memory(&image, encoded.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw ImageIoError(ImageIoErrc::io_failure, path.string() + ": " + image.message);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ImageIoError(ImageIoErrc::io_failure, "cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(encoded.data()), static_cast<std::streamsize>(size));
  if (!out) {
    throw ImageIoError(ImageIoErrc::io_failure, "write failed for " + path.string());
  }
}

void write_pnm(const ImageBuffer& img, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ImageIoError(ImageIoErrc::io_failure, "cannot write " + path.string());
  }
  out << (img.channels() == 3 ? "P6" : "P5") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<char> raw(img.size());
  std::size_t i = 0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) raw[i++] = static_cast<char>(to_byte(img.at(c, y, x)));
    }
  }
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!out) {
    throw ImageIoError(ImageIoErrc::io_failure, "write failed for " + path.string());
  }
}

std::string lower_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

ImageBuffer load_image(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) {
    throw ImageIoError(ImageIoErrc::missing_file, "no such file: " + path.string());
  }
  const auto bytes = read_all(path);
  static constexpr std::array<unsigned char, 8> kPngSignature{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= kPngSignature.size() && std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin())) {
    return decode_png(bytes, path);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    return decode_pnm(bytes, path);
  }
  throw ImageIoError(ImageIoErrc::unsupported_format, path.string() + ": not a PNG, PGM or PPM file");
}

void save_image(const ImageBuffer& img, const fs::path& path) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw InputError("save_image supports 1 or 3 channels");
  }
  if (img.width() == 0 || img.height() == 0) {
    throw InputError("cannot save an empty image");
  }
  const std::string ext = lower_extension(path);
  if (ext == ".pgm" || ext == ".ppm") {
    if ((ext == ".ppm") != (img.channels() == 3)) {
      throw ImageIoError(ImageIoErrc::unsupported_format, path.string() + ": extension does not match channel count");
    }
    write_pnm(img, path);
  } else if (ext == ".png") {
    write_png(img, path);
  } else {
    throw ImageIoError(ImageIoErrc::unsupported_format, path.string() + ": output must be .png, .pgm or .ppm");
  }
}

ImageBuffer quantize_8bit(const ImageBuffer& img) {
  ImageBuffer out = img;
  for (float& v : out.data()) v = to_unit(to_byte(v), 255);
  return out;
}

ImageBuffer to_luma(const ImageBuffer& img) {
  if (img.channels() == 1) return img;
  if (img.channels() != 3) {
    throw InputError("to_luma expects 1 or 3 channels, got " + std::to_string(img.channels()));
  }
  ImageBuffer out(img.width(), img.height(), 1);
  const auto r = img.plane(0);
  const auto g = img.plane(1);
  const auto b = img.plane(2);
  auto dst = out.plane(0);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double y = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    dst[i] = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
  return out;
}

PatchSet extract_patch_grid(const ImageBuffer& img, int patch_size) {
  if (patch_size <= 0 || img.width() % patch_size != 0 || img.height() % patch_size != 0 || img.empty()) {
    std::ostringstream msg;
    msg << "patch size " << patch_size << " does not tile " << img.width() << "x" << img.height();
    throw ShapeError(msg.str());
  }
  PatchSet set;
  set.source_width = img.width();
  set.source_height = img.height();
  set.patch_size = patch_size;
  const int rows = img.height() / patch_size;
  const int cols = img.width() / patch_size;
  const double cx = img.width() / 2.0;
  const double cy = img.height() / 2.0;
  set.patches.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Patch p;
      p.grid_index = {r, c};
      p.position_x = c * patch_size + patch_size / 2.0 - cx;
      p.position_y = r * patch_size + patch_size / 2.0 - cy;
      p.pixels = ImageBuffer(patch_size, patch_size, img.channels());
      for (int ch = 0; ch < img.channels(); ++ch) {
        for (int y = 0; y < patch_size; ++y) {
          const float* src = &img.plane(ch)[static_cast<std::size_t>(r * patch_size + y) * img.width() + c * patch_size];
          std::copy(src, src + patch_size, &p.pixels.at(ch, y, 0));
        }
      }
      set.patches.push_back(std::move(p));
    }
  }
  return set;
}

ImageBuffer assemble_patches(const PatchSet& set) {
  if (set.patches.empty()) throw ShapeError("empty patch set");
  const int channels = set.patches.front().pixels.channels();
  ImageBuffer img(set.source_width, set.source_height, channels);
  const int p = set.patch_size;
  for (const Patch& patch : set.patches) {
    for (int ch = 0; ch < channels; ++ch) {
      for (int y = 0; y < p; ++y) {
        const float* src = patch.pixels.plane(ch).data() + static_cast<std::size_t>(y) * p;
        std::copy(src, src + p, &img.at(ch, patch.grid_index.row * p + y, patch.grid_index.col * p));
      }
    }
  }
  return img;
}

}  // namespace viqa
