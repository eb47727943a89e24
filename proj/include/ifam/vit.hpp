// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ifam/attention_mask.hpp"
#include "ifam/image.hpp"
#include "ifam/numcore/rng.hpp"
#include "ifam/params.hpp"

namespace ifam {

struct ModelConfig {
  int image_size = 32;
  int patch_size = 8;
  int channels = 3;
  int embed_dim = 64;
  int n_heads = 4;
  int n_layers = 4;
  int mlp_ratio = 4;
  int n_registers = 2;
  int n_classes = 4;
  int n_parts = 2;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int seq_len() const { return num_patches() + 1 + n_registers; }
  int head_dim() const { return embed_dim / n_heads; }
  int patch_dim() const { return channels * patch_size * patch_size; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Embedded tokens of one image. `patch_ids` holds the grid index of each
/// patch row, in increasing order; compaction drops rows but keeps ids.
struct TokenGrid {
  nc::Tensor patches;    // [n, d]
  nc::Tensor cls;        // [1, d]
  nc::Tensor registers;  // [R, d]
  int grid_h = 0;
  int grid_w = 0;
  std::vector<int> patch_ids;

  int num_patches() const { return static_cast<int>(patch_ids.size()); }
  // [patches; cls; registers]
  nc::Tensor sequence() const;
};

struct VitOutput {
  nc::Tensor cls;      // [d]
  nc::Tensor patches;  // [n, d]
};

/// Image pixels scaled to [-1, 1], grouped into row-major patches:
/// [N, channels * patch * patch].
nc::Tensor patchify(const Image& image, const ModelConfig& config);

/// Pre-norm ViT whose parameters live in a shared ParamSet under `prefix`.
class VisionTransformer {
 public:
  VisionTransformer(ModelConfig config, const ParamSet& params, std::string prefix);

  /// Patch positions start either as small Gaussian noise or as a fixed 2D
  /// sine-cosine table.
  enum class PosInit { random, sincos };

  static void init_params(const ModelConfig& config, ParamSet& params,
                          const std::string& prefix, nc::Rng& rng,
                          PosInit pos = PosInit::random);

  const ModelConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }

  TokenGrid embed(const Image& image) const;

  /// Multi-head self-attention of layer `layer` with an additive mask.
  nc::Tensor masked_attention(const nc::Tensor& tokens, const AttentionMask* mask,
                              int layer) const;

  /// Transformer blocks and final norm over an embedded sequence.
  nc::Tensor encode(const nc::Tensor& sequence, const AttentionMask* mask) const;

  /// Embeds and encodes. With `live` present, every layer uses the mask
  /// built from it; an all-ones `live` is the same as no mask.
  VitOutput forward(const Image& image,
                    const std::vector<std::uint8_t>* live = nullptr) const;

  VitOutput split_output(const nc::Tensor& encoded, int n_patches) const;

 private:
  const nc::Tensor& p(const std::string& name) const;

  ModelConfig config_;
  const ParamSet* params_;
  std::string prefix_;
};

}  // namespace ifam
