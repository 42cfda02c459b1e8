#include "rdnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>

#include "rdnet/error.hpp"
#include "rdnet/named_arrays.hpp"

namespace rdnet {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

Tensor<float> read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed for '" + path.string() + "'");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const auto row_bytes = png_get_rowbytes(png, info);
  pixels.resize(row_bytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const std::int64_t h = height, w = width, hw = h * w;
  std::vector<float> out(static_cast<std::size_t>(3 * hw));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v;
        if (depth == 16) {
          const png_byte* p = rows[y] + (x * 3 + c) * 2;
          v = static_cast<float>((p[0] << 8 | p[1]) / 65535.0);
        } else {
          v = static_cast<float>(rows[y][x * 3 + c] / 255.0);
        }
        out[static_cast<std::size_t>(c * hw + y * w + x)] = v;
      }
  return Tensor<float>::from_data({3, h, w}, std::move(out));
}

Tensor<float> read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 2;
  auto next_int = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
      if (v > (1L << 24)) break;
    }
    if (!any) throw FormatError("malformed PPM header in '" + path.string() + "'");
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  ++pos;  // single whitespace before the raster
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw FormatError("unsupported PPM dimensions or maxval in '" + path.string() + "'");
  }
  const std::size_t sample = maxval < 256 ? 1 : 2;
  const std::size_t need = static_cast<std::size_t>(w * h * 3) * sample;
  if (bytes.size() < pos + need) throw FormatError("truncated PPM raster in '" + path.string() + "'");
  const std::int64_t hw = static_cast<std::int64_t>(w) * h;
  std::vector<float> out(static_cast<std::size_t>(3 * hw));
  for (std::int64_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) {
      const std::size_t at = pos + static_cast<std::size_t>(i * 3 + c) * sample;
      const double v = sample == 1 ? bytes[at] : (bytes[at] << 8 | bytes[at + 1]);
      out[static_cast<std::size_t>(c * hw + i)] = static_cast<float>(v / maxval);
    }
  return Tensor<float>::from_data({3, h, w}, std::move(out));
}

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0));
}

}  // namespace

Tensor<float> read_image(const std::filesystem::path& path) {
  std::uint8_t magic[8] = {};
  {
    auto file = open_file(path, "rb");
    if (std::fread(magic, 1, sizeof magic, file.get()) < 2) {
      throw FormatError("'" + path.string() + "' is too short to be an image");
    }
  }
  if (png_sig_cmp(magic, 0, 8) == 0) return read_png(path);
  if (magic[0] == 'P' && magic[1] == '6') return read_ppm(path);
  throw FormatError("'" + path.string() + "' is neither PNG nor binary PPM");
}

void write_image(const std::filesystem::path& path, const Tensor<float>& image) {
  const auto& s = image.shape();
  const bool ok = (s.size() == 3 && s[0] == 3) || (s.size() == 4 && s[0] == 1 && s[1] == 3);
  if (!ok) throw ShapeError("write_image expects 3 x H x W, got " + to_string(s));
  const std::int64_t h = s[s.size() - 2], w = s[s.size() - 1], hw = h * w;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(3 * hw));
  for (std::int64_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>(i * 3 + c)] = quantize(image[c * hw + i]);

  if (path.extension() == ".ppm") {
    const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), rgb.begin(), rgb.end());
    write_file_bytes(path, bytes);
    return;
  }

  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed for '" + path.string() + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::int64_t y = 0; y < h; ++y) png_write_row(png, rgb.data() + y * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace rdnet
