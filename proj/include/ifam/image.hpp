// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace ifam {

/// Channel-major 8-bit image. Pixels map to [-1, 1] when fed to a model.
struct Image {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // [channels][height][width]

  Image() = default;
  Image(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0) {}

  std::uint8_t& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::uint8_t at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

}  // namespace ifam
