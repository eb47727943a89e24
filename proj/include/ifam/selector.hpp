// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ifam/numcore/rng.hpp"
#include "ifam/params.hpp"
#include "ifam/vit.hpp"

namespace ifam {

/// Soft distribution of every token over background (row 0) and K parts.
struct PartAssignment {
  nc::Tensor soft;        // [K+1, N], columns sum to 1
  std::vector<int> hard;  // per-token part index; argmax, ties to lowest
  bool gumbel = false;
  double temperature = 1.0;

  int num_parts() const { return soft.dim(0) - 1; }
  int num_tokens() const { return soft.dim(1); }
};

/// Binary token mask s with its straight-through carrier.
struct HardTokenMask {
  std::vector<std::uint8_t> s;
  nc::Tensor p_fg;  // [N] soft foreground probability
  nc::Tensor st;    // [N] forward value s, backward through p_fg
  std::set<int> kept_parts;
  bool fallback = false;

  int live_count() const;
};

struct LossWeights {
  double total_variation = 1.0;
  double presence = 1.0;
  double concentration = 1.0;
  double orthogonality = 1.0;
  double entropy = 1.0;
  double background_prior = 1.0;  // w_p0
  double equivariance = 1.0;
  double stage1_ce = 1.0;
  double stage2_ce = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct ShapingLosses {
  nc::Tensor total_variation;
  nc::Tensor presence;
  nc::Tensor concentration;
  nc::Tensor orthogonality;
  nc::Tensor entropy;
  nc::Tensor background_prior;

  /// Weighted sum. Terms with zero weight are left out of the graph.
  nc::Tensor weighted(const LossWeights& w) const;
};

/// logits[k, i] = cos(features_i, prototype_k) / temperature, plus Gumbel
/// noise when `gumbel` is set; softmax over parts per token.
PartAssignment assign_parts(const nc::Tensor& features, const nc::Tensor& prototypes,
                            const nc::Tensor& temperature, bool gumbel, nc::Rng* rng);
PartAssignment assign_parts(const nc::Tensor& features, const nc::Tensor& prototypes,
                            double temperature, bool gumbel, nc::Rng* rng);

/// Hard map of a [K+1, N] assignment: column argmax with ties to the lowest
/// index.
std::vector<int> hard_map(const nc::Tensor& soft);

ShapingLosses shaping_losses(const PartAssignment& assignment,
                             const nc::Tensor& prototypes, int grid_h, int grid_w);

/// Merges kept parts into a binary mask. Forward value is exact {0,1};
/// gradients reach `assignment.soft` through p_fg. If no token survives,
/// the token with the largest p_fg is promoted.
HardTokenMask discretize(const PartAssignment& assignment, const std::set<int>& kept_parts);

/// Cyclic shift of every channel by (dy, dx) pixels.
Image roll_image(const Image& image, int dy, int dx);

/// Mean squared difference between the assignment of a rolled image and the
/// rolled assignment of the original, the roll being (sy, sx) whole tokens.
nc::Tensor equivariance_loss(const PartAssignment& original, const PartAssignment& rolled,
                             int grid_h, int grid_w, int sy, int sx);

std::set<int> all_parts(int k);

struct Stage1Head {
  nc::Tensor modulation;  // [K, d]
  nc::Tensor weight;      // [d, C]
  nc::Tensor bias;        // [C]
};

/// Part-pooled classification. `keep` weights each foreground part (1 kept,
/// 0 dropped); parts with zero assigned mass pool to zero.
nc::Tensor stage1_classify(const PartAssignment& assignment, const nc::Tensor& features,
                           const Stage1Head& head, const std::vector<double>& keep);

struct SelectorOutput {
  VitOutput vit;
  PartAssignment assignment;
};

/// Stage-1 model: unmasked ViT, part prototypes, learnable temperature.
class Selector {
 public:
  static constexpr const char* kPrefix = "stage1.";

  Selector(const ModelConfig& config, const ParamSet& params);
  static void init_params(const ModelConfig& config, ParamSet& params, nc::Rng& rng);

  SelectorOutput run(const Image& image, bool gumbel, nc::Rng* rng) const;

  const VisionTransformer& vit() const { return vit_; }
  const nc::Tensor& prototypes() const;
  // exp(log_tau)
  nc::Tensor temperature() const;
  Stage1Head head() const;

 private:
  const ParamSet* params_;
  VisionTransformer vit_;
};

}  // namespace ifam
