/*
 * Copyright (c) 2026 The proxytta Authors. All Rights Reserved
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>

#include "proxytta/errors.hpp"

namespace proxytta::png {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw FormatError("cannot open " + path.string());
  return f;
}

// libpng reports errors by longjmp; the message is parked here and rethrown
// as a C++ exception once control is back outside libpng.
struct ErrorSlot {
  std::jmp_buf jump;
  char message[256] = {0};
};

[[noreturn]] void on_error(png_structp png, png_const_charp msg) {
  auto* slot = static_cast<ErrorSlot*>(png_get_error_ptr(png));
  std::snprintf(slot->message, sizeof(slot->message), "%s", msg);
  std::longjmp(slot->jump, 1);
}

void on_warning(png_structp, png_const_charp) {}

// Returns false on a libpng error; only trivially destructible state lives
// between setjmp and the calls that may longjmp.
bool write_rows_raw(std::FILE* f, ErrorSlot& slot, int width, int height,
                    int bit_depth, int color_type, png_bytepp rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &slot,
                                            on_error, on_warning);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (setjmp(slot.jump)) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, width, height, bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // rows hold little-endian uint16
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

void write_rows(const std::filesystem::path& path, int width, int height,
                int bit_depth, int color_type, std::vector<png_bytep>& rows) {
  FilePtr f = open(path, "wb");
  ErrorSlot slot;
  if (!write_rows_raw(f.get(), slot, width, height, bit_depth, color_type,
                      rows.data())) {
    throw FormatError(path.string() + ": " + slot.message);
  }
}

enum class ReadStatus { Ok, LibError, WrongFormat };

struct ReadHeader {
  int width = 0;
  int height = 0;
  int depth = 0;
  int color = 0;
};

// Two-phase read: the header callback sizes the destination buffer.
ReadStatus read_raw(std::FILE* f, ErrorSlot& slot, int want_depth,
                    int want_color, ReadHeader& header,
                    const std::function<png_bytepp(int, int)>& allocate) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &slot,
                                           on_error, on_warning);
  if (png == nullptr) return ReadStatus::LibError;
  png_infop info = png_create_info_struct(png);
  if (setjmp(slot.jump)) {
    png_destroy_read_struct(&png, &info, nullptr);
    return ReadStatus::LibError;
  }
  png_init_io(png, f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  header.depth = png_get_bit_depth(png, info);
  header.color = png_get_color_type(png, info);
  header.width = static_cast<int>(png_get_image_width(png, info));
  header.height = static_cast<int>(png_get_image_height(png, info));
  if (header.depth != want_depth || header.color != want_color) {
    png_destroy_read_struct(&png, &info, nullptr);
    return ReadStatus::WrongFormat;
  }
  if (header.depth == 16) png_set_swap(png);
  png_bytepp rows = allocate(header.width, header.height);
  png_read_image(png, rows);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return ReadStatus::Ok;
}

template <typename Pixel>
void read_rows(const std::filesystem::path& path, int want_depth,
               int want_color, int channels, int& width, int& height,
               std::vector<Pixel>& pixels) {
  FilePtr f = open(path, "rb");
  const std::string name = path.string();
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(name + ": not a PNG file");
  }
  ErrorSlot slot;
  ReadHeader header;
  std::vector<png_bytep> rows;
  auto allocate = [&](int w, int h) {
    pixels.assign(static_cast<std::size_t>(w) * h * channels, 0);
    rows.resize(h);
    for (int y = 0; y < h; ++y) {
      rows[y] = reinterpret_cast<png_bytep>(
          pixels.data() + static_cast<std::size_t>(y) * w * channels);
    }
    return rows.data();
  };
  switch (read_raw(f.get(), slot, want_depth, want_color, header, allocate)) {
    case ReadStatus::Ok:
      break;
    case ReadStatus::LibError:
      throw FormatError(name + ": " + slot.message);
    case ReadStatus::WrongFormat:
      throw FormatError(name + ": expected bit depth " +
                        std::to_string(want_depth) + " color type " +
                        std::to_string(want_color) + ", found " +
                        std::to_string(header.depth) + "/" +
                        std::to_string(header.color));
  }
  width = header.width;
  height = header.height;
}

}  // namespace

void write8(const std::filesystem::path& path, const Raster8& raster) {
  std::vector<png_bytep> rows(raster.height);
  for (int y = 0; y < raster.height; ++y) {
    rows[y] = const_cast<png_bytep>(raster.pixels.data() +
                                    static_cast<std::size_t>(y) *
                                        raster.width * raster.channels);
  }
  write_rows(path, raster.width, raster.height, 8,
             raster.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
             rows);
}

void write16(const std::filesystem::path& path, const Raster16& raster) {
  std::vector<png_bytep> rows(raster.height);
  for (int y = 0; y < raster.height; ++y) {
    rows[y] = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(
        raster.pixels.data() + static_cast<std::size_t>(y) * raster.width));
  }
  write_rows(path, raster.width, raster.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

Raster8 read_rgb8(const std::filesystem::path& path) {
  Raster8 r;
  r.channels = 3;
  read_rows(path, 8, PNG_COLOR_TYPE_RGB, 3, r.width, r.height, r.pixels);
  return r;
}

Raster16 read_gray16(const std::filesystem::path& path) {
  Raster16 r;
  read_rows(path, 16, PNG_COLOR_TYPE_GRAY, 1, r.width, r.height, r.pixels);
  return r;
}

}  // namespace proxytta::png
