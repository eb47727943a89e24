// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "ifam/attention_mask.hpp"
#include "ifam/numcore/rng.hpp"
#include "ifam/params.hpp"
#include "ifam/selector.hpp"
#include "ifam/vit.hpp"

namespace ifam {

/// Attention mask of a HardTokenMask: patch block per s, class and
/// registers restricted to live patches and specials, dead rows blocked.
AttentionMask build_attention_mask(const HardTokenMask& mask, const SpecialTokenPolicy& policy,
                                   int n_registers);

/// Live patches only, original grid order, position embeddings included.
TokenGrid compact_tokens(const TokenGrid& tokens, const std::vector<std::uint8_t>& s);

/// Right-padded compacted sequences, one per image.
struct PaddedBatch {
  int k_max = 0;
  std::vector<nc::Tensor> sequences;  // [k_max + 1 + R, d]
  std::vector<AttentionMask> masks;
  std::vector<std::vector<std::uint8_t>> valid;  // per padded patch slot
};

PaddedBatch pad_batch(const std::vector<TokenGrid>& compacted);

/// Training-time part dropout. Each part is dropped with probability `rate`;
/// if none survives, one of the input parts is restored uniformly at random.
std::set<int> part_dropout(const std::set<int>& kept, double rate, nc::Rng& rng, bool training);

/// Stage-2 model: a second ViT whose receptive field is the selector's mask,
/// plus a linear head on the class embedding.
class Predictor {
 public:
  static constexpr const char* kPrefix = "stage2.";

  Predictor(const ModelConfig& config, const ParamSet& params,
            SpecialTokenPolicy policy = {});
  static void init_params(const ModelConfig& config, ParamSet& params, nc::Rng& rng);

  const VisionTransformer& vit() const { return vit_; }
  const SpecialTokenPolicy& policy() const { return policy_; }

  nc::Tensor head(const nc::Tensor& cls) const;

  /// Masked forward. Patch embeddings are multiplied by the straight-through
  /// mask (exactly 1 or 0 in value) so the loss reaches the selector.
  nc::Tensor stage2_forward(const Image& image, const HardTokenMask& mask) const;
  /// Same receptive field from a plain binary vector (no gradient path).
  nc::Tensor stage2_forward(const Image& image, const std::vector<std::uint8_t>& s) const;

  nc::Tensor dense_forward(const Image& image) const;
  /// Soft-mask ablation: tokens weighted by p_fg, attention unmasked.
  nc::Tensor soft_forward(const Image& image, const nc::Tensor& p_fg) const;

  /// Unmasked forward over the compacted live tokens.
  nc::Tensor compacted_forward(const Image& image, const std::vector<std::uint8_t>& s) const;
  /// Pads every image's compacted tokens to the batch maximum.
  std::vector<nc::Tensor> padded_forward(const std::vector<Image>& images,
                                         const std::vector<std::vector<std::uint8_t>>& masks) const;

 private:
  const ParamSet* params_;
  VisionTransformer vit_;
  SpecialTokenPolicy policy_;
};

}  // namespace ifam
