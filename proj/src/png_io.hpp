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

#ifndef PROXYTTA_SRC_PNG_IO_HPP_
#define PROXYTTA_SRC_PNG_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <vector>

namespace proxytta::png {

struct Raster8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

struct Raster16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;  // row-major, single channel
};

void write8(const std::filesystem::path& path, const Raster8& raster);
void write16(const std::filesystem::path& path, const Raster16& raster);

// Both readers throw FormatError naming the file when the bit depth or color
// type differs from what was asked for.
Raster8 read_rgb8(const std::filesystem::path& path);
Raster16 read_gray16(const std::filesystem::path& path);

}  // namespace proxytta::png

#endif  // PROXYTTA_SRC_PNG_IO_HPP_
