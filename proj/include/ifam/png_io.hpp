// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ifam/image.hpp"

namespace ifam::png {

void write_rgb(const std::string& path, const Image& image);
Image read_rgb(const std::string& path);
std::vector<std::uint8_t> encode_rgb(const Image& image);

/// 1-bit grayscale, nonzero -> white.
void write_bitmask(const std::string& path, const std::vector<std::uint8_t>& mask, int width,
                   int height);
std::vector<std::uint8_t> read_bitmask(const std::string& path, int* width, int* height);

/// Palette entry i is the color of part index i; background is index 0.
std::vector<std::array<std::uint8_t, 3>> part_palette(int n_parts);

/// 8-bit indexed-color PNG.
std::vector<std::uint8_t> encode_indexed(const std::vector<std::uint8_t>& indices, int width,
                                         int height,
                                         const std::vector<std::array<std::uint8_t, 3>>& palette);
void write_indexed(const std::string& path, const std::vector<std::uint8_t>& indices, int width,
                   int height, const std::vector<std::array<std::uint8_t, 3>>& palette);
/// Indices and palette of an indexed PNG.
std::vector<std::uint8_t> read_indexed(const std::string& path, int* width, int* height,
                                       std::vector<std::array<std::uint8_t, 3>>* palette);

}  // namespace ifam::png
