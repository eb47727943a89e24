// SPDX-License-Identifier: Apache-2.0
#include "ifam/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace ifam::png {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error("png: " + what); }

struct Writer {
  png_structp png = nullptr;
  png_infop info = nullptr;
  Writer() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail("cannot create write struct");
    info = png_create_info_struct(png);
    if (!info) fail("cannot create info struct");
  }
  ~Writer() { png_destroy_write_struct(&png, &info); }
};

struct Reader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  Reader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail("cannot create read struct");
    info = png_create_info_struct(png);
    if (!info) fail("cannot create info struct");
  }
  ~Reader() { png_destroy_read_struct(&png, &info, nullptr); }
};

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

// Encodes rows with the given header; `sink` is a FILE* or memory buffer.
template <class Setup>
void encode(std::FILE* file, std::vector<std::uint8_t>* memory, int width, int height,
            std::vector<std::vector<std::uint8_t>>& rows, Setup setup) {
  Writer w;
  if (setjmp(png_jmpbuf(w.png))) fail("encode failed");
  if (file) {
    png_init_io(w.png, file);
  } else {
    png_set_write_fn(w.png, memory, append_bytes, nullptr);
  }
  setup(w.png, w.info);
  png_write_info(w.png, w.info);
  std::vector<png_bytep> ptrs;
  for (auto& r : rows) ptrs.push_back(r.data());
  png_write_image(w.png, ptrs.data());
  png_write_end(w.png, nullptr);
  (void)width;
  (void)height;
}

std::vector<std::vector<std::uint8_t>> rgb_rows(const Image& image) {
  if (image.channels != 3) fail("RGB image expected");
  std::vector<std::vector<std::uint8_t>> rows(static_cast<std::size_t>(image.height),
                                              std::vector<std::uint8_t>(image.width * 3));
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) rows[y][x * 3 + c] = image.at(c, y, x);
  return rows;
}

std::vector<std::vector<std::uint8_t>> index_rows(const std::vector<std::uint8_t>& idx, int w,
                                                  int h) {
  if (idx.size() != static_cast<std::size_t>(w) * h) fail("index buffer size mismatch");
  std::vector<std::vector<std::uint8_t>> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[y].assign(idx.begin() + y * w, idx.begin() + (y + 1) * w);
  return rows;
}

auto indexed_setup(int w, int h, const std::vector<std::array<std::uint8_t, 3>>& palette) {
  return [w, h, &palette](png_structp png, png_infop info) {
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_color> colors;
    for (const auto& c : palette) colors.push_back({c[0], c[1], c[2]});
    png_set_PLTE(png, info, colors.data(), static_cast<int>(colors.size()));
  };
}

File open(const std::string& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) fail("cannot open " + path);
  return f;
}

// Reads raw rows with no transformations except unpacking sub-byte depths.
std::vector<std::vector<std::uint8_t>> read_rows(const std::string& path, int* width, int* height,
                                                 int* color_type, Reader& r, bool expand_gray) {
  File f = open(path, "rb");
  if (setjmp(png_jmpbuf(r.png))) fail("decode failed for " + path);
  png_init_io(r.png, f.get());
  png_read_info(r.png, r.info);
  *width = static_cast<int>(png_get_image_width(r.png, r.info));
  *height = static_cast<int>(png_get_image_height(r.png, r.info));
  *color_type = png_get_color_type(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  if (depth < 8) png_set_packing(r.png);
  if (expand_gray && *color_type == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(r.png);
  if (depth == 16) png_set_strip_16(r.png);
  png_read_update_info(r.png, r.info);
  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
  std::vector<std::vector<std::uint8_t>> rows(static_cast<std::size_t>(*height),
                                              std::vector<std::uint8_t>(rowbytes));
  std::vector<png_bytep> ptrs;
  for (auto& row : rows) ptrs.push_back(row.data());
  png_read_image(r.png, ptrs.data());
  png_read_end(r.png, nullptr);
  return rows;
}

}  // namespace

void write_rgb(const std::string& path, const Image& image) {
  auto rows = rgb_rows(image);
  File f = open(path, "wb");
  encode(f.get(), nullptr, image.width, image.height, rows,
         [&](png_structp png, png_infop info) {
           png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
                        PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                        PNG_FILTER_TYPE_DEFAULT);
         });
}

std::vector<std::uint8_t> encode_rgb(const Image& image) {
  auto rows = rgb_rows(image);
  std::vector<std::uint8_t> out;
  encode(nullptr, &out, image.width, image.height, rows, [&](png_structp png, png_infop info) {
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  });
  return out;
}

Image read_rgb(const std::string& path) {
  Reader r;
  int w = 0, h = 0, ct = 0;
  auto rows = read_rows(path, &w, &h, &ct, r, false);
  if (ct != PNG_COLOR_TYPE_RGB) fail(path + " is not an 8-bit RGB PNG");
  Image img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = rows[y][x * 3 + c];
  return img;
}

void write_bitmask(const std::string& path, const std::vector<std::uint8_t>& mask, int width,
                   int height) {
  if (mask.size() != static_cast<std::size_t>(width) * height) fail("mask size mismatch");
  std::vector<std::vector<std::uint8_t>> rows(static_cast<std::size_t>(height),
                                              std::vector<std::uint8_t>((width + 7) / 8, 0));
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (mask[y * width + x]) rows[y][x / 8] |= static_cast<std::uint8_t>(0x80 >> (x % 8));
  File f = open(path, "wb");
  encode(f.get(), nullptr, width, height, rows, [&](png_structp png, png_infop info) {
    png_set_IHDR(png, info, width, height, 1, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  });
}

std::vector<std::uint8_t> read_bitmask(const std::string& path, int* width, int* height) {
  Reader r;
  int ct = 0;
  auto rows = read_rows(path, width, height, &ct, r, false);
  if (ct != PNG_COLOR_TYPE_GRAY) fail(path + " is not a grayscale mask");
  std::vector<std::uint8_t> out(static_cast<std::size_t>(*width) * *height);
  for (int y = 0; y < *height; ++y)
    for (int x = 0; x < *width; ++x) out[y * *width + x] = rows[y][x] ? 1 : 0;
  return out;
}

std::vector<std::array<std::uint8_t, 3>> part_palette(int n_parts) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 17> kColors = {{
      {0, 0, 0},       {230, 25, 75},   {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
      {245, 130, 48},  {145, 30, 180},  {70, 240, 240}, {240, 50, 230}, {210, 245, 60},
      {250, 190, 212}, {0, 128, 128},   {220, 190, 255}, {170, 110, 40}, {255, 250, 200},
      {128, 0, 0},     {170, 255, 195},
  }};
  std::vector<std::array<std::uint8_t, 3>> out;
  for (int i = 0; i <= n_parts; ++i) {
    if (i < static_cast<int>(kColors.size())) {
      out.push_back(kColors[i]);
    } else {
      out.push_back({static_cast<std::uint8_t>(37 * i), static_cast<std::uint8_t>(91 * i),
                     static_cast<std::uint8_t>(53 * i)});
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_indexed(const std::vector<std::uint8_t>& indices, int width,
                                         int height,
                                         const std::vector<std::array<std::uint8_t, 3>>& palette) {
  auto rows = index_rows(indices, width, height);
  std::vector<std::uint8_t> out;
  encode(nullptr, &out, width, height, rows, indexed_setup(width, height, palette));
  return out;
}

void write_indexed(const std::string& path, const std::vector<std::uint8_t>& indices, int width,
                   int height, const std::vector<std::array<std::uint8_t, 3>>& palette) {
  auto rows = index_rows(indices, width, height);
  File f = open(path, "wb");
  encode(f.get(), nullptr, width, height, rows, indexed_setup(width, height, palette));
}

std::vector<std::uint8_t> read_indexed(const std::string& path, int* width, int* height,
                                       std::vector<std::array<std::uint8_t, 3>>* palette) {
  Reader r;
  int ct = 0;
  auto rows = read_rows(path, width, height, &ct, r, false);
  if (ct != PNG_COLOR_TYPE_PALETTE) fail(path + " is not an indexed PNG");
  if (palette) {
    png_colorp colors = nullptr;
    int n = 0;
    png_get_PLTE(r.png, r.info, &colors, &n);
    palette->clear();
    for (int i = 0; i < n; ++i) palette->push_back({colors[i].red, colors[i].green, colors[i].blue});
  }
  std::vector<std::uint8_t> out;
  for (auto& row : rows) out.insert(out.end(), row.begin(), row.begin() + *width);
  return out;
}

}  // namespace ifam::png
