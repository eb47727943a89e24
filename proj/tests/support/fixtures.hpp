// SPDX-License-Identifier: Apache-2.0
// Small models, images and datasets shared by the unit and acceptance tests.
#pragma once

#include <cstdint>
#include <vector>

#include "ifam/databench.hpp"
#include "ifam/image.hpp"
#include "ifam/model.hpp"
#include "ifam/numcore/rng.hpp"
#include "ifam/vit.hpp"

namespace ifam::testing {

// 16x16 image, 4x4 grid of 4-pixel patches.
inline ModelConfig tiny_config(int n_parts = 2) {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.n_registers = 2;
  c.n_classes = 3;
  c.n_parts = n_parts;
  return c;
}

inline DatasetSpec tiny_spec(std::uint64_t seed = 1) {
  DatasetSpec s;
  s.n_classes = 4;
  s.n_backgrounds = 2;
  s.n_train = 24;
  s.n_val = 12;
  s.n_test = 12;
  s.image_size = 32;
  s.patch_size = 8;
  s.seed = seed;
  return s;
}

inline Image random_image(const ModelConfig& c, nc::Rng& rng) {
  Image img(c.channels, c.image_size, c.image_size);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.uniform_int(256));
  return img;
}

inline std::vector<std::uint8_t> random_mask(int n, nc::Rng& rng, double p_live = 0.5) {
  std::vector<std::uint8_t> s(static_cast<std::size_t>(n));
  bool any = false;
  for (auto& v : s) any |= (v = rng.bernoulli(p_live) ? 1 : 0);
  if (!any) s[rng.uniform_int(n)] = 1;
  return s;
}

// Redraws every pixel of the patches whose mask entry is 0.
inline Image perturb_masked(const Image& image, const std::vector<std::uint8_t>& s,
                            int patch_size, nc::Rng& rng) {
  Image out = image;
  const int g = image.width / patch_size;
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        if (!s[(y / patch_size) * g + x / patch_size])
          out.at(c, y, x) = static_cast<std::uint8_t>(rng.uniform_int(256));
  return out;
}

}  // namespace ifam::testing
