// SPDX-License-Identifier: Apache-2.0
#include "ifam/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ifam/numcore/ops.hpp"

namespace ifam {

using nc::Tensor;

AttentionMask build_attention_mask(const HardTokenMask& mask, const SpecialTokenPolicy& policy,
                                   int n_registers) {
  return build_attention_mask(mask.s, n_registers, policy);
}

TokenGrid compact_tokens(const TokenGrid& tokens, const std::vector<std::uint8_t>& s) {
  if (static_cast<int>(s.size()) != tokens.num_patches()) {
    throw std::invalid_argument("compact_tokens: mask length mismatch");
  }
  std::vector<int> rows;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (s[i]) rows.push_back(i);
  TokenGrid out = tokens;
  out.patches = nc::gather_rows(tokens.patches, rows);
  out.patch_ids.clear();
  for (int r : rows) out.patch_ids.push_back(tokens.patch_ids[r]);
  return out;
}

PaddedBatch pad_batch(const std::vector<TokenGrid>& compacted) {
  if (compacted.empty()) throw std::invalid_argument("pad_batch: empty batch");
  PaddedBatch batch;
  for (const auto& g : compacted) batch.k_max = std::max(batch.k_max, g.num_patches());
  for (const auto& g : compacted) {
    const int live = g.num_patches();
    const int d = g.cls.dim(1);
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(batch.k_max), 0);
    std::fill(valid.begin(), valid.begin() + live, 1);
    std::vector<Tensor> parts;
    if (live > 0) parts.push_back(g.patches);
    if (batch.k_max > live) parts.push_back(Tensor::zeros({batch.k_max - live, d}));
    parts.push_back(g.cls);
    if (g.registers.dim(0) > 0) parts.push_back(g.registers);
    batch.sequences.push_back(nc::concat_rows(parts));
    batch.masks.push_back(build_attention_mask(valid, g.registers.dim(0)));
    batch.valid.push_back(std::move(valid));
  }
  return batch;
}

std::set<int> part_dropout(const std::set<int>& kept, double rate, nc::Rng& rng, bool training) {
  if (!(rate >= 0 && rate <= 1)) throw std::invalid_argument("part_dropout: rate not in [0,1]");
  if (!training || rate == 0 || kept.empty()) return kept;
  std::set<int> out;
  for (int p : kept)
    if (!rng.bernoulli(rate)) out.insert(p);
  if (out.empty()) {
    auto it = kept.begin();
    std::advance(it, rng.uniform_int(static_cast<int>(kept.size())));
    out.insert(*it);
  }
  return out;
}

Predictor::Predictor(const ModelConfig& config, const ParamSet& params, SpecialTokenPolicy policy)
    : params_(&params), vit_(config, params, kPrefix), policy_(policy) {}

void Predictor::init_params(const ModelConfig& c, ParamSet& params, nc::Rng& rng) {
  // Stage 2 sees only the kept tokens, so shape has to come from positions;
  // a sine-cosine start makes them informative from the first step.
  VisionTransformer::init_params(c, params, kPrefix, rng, VisionTransformer::PosInit::sincos);
  std::vector<double> w(static_cast<std::size_t>(c.embed_dim) * c.n_classes);
  for (auto& v : w) v = rng.normal() / std::sqrt(c.embed_dim);
  params.add(std::string(kPrefix) + "head_w", Tensor::from({c.embed_dim, c.n_classes}, w));
  params.add(std::string(kPrefix) + "head_b", Tensor::zeros({c.n_classes}));
}

Tensor Predictor::head(const Tensor& cls) const {
  const std::string p = kPrefix;
  const int d = vit_.config().embed_dim;
  return nc::reshape(nc::add_row(nc::matmul(nc::reshape(cls, {1, d}), params_->get(p + "head_w")),
                                 params_->get(p + "head_b")),
                     {vit_.config().n_classes});
}

Tensor Predictor::stage2_forward(const Image& image, const HardTokenMask& mask) const {
  TokenGrid grid = vit_.embed(image);
  if (static_cast<int>(mask.s.size()) != grid.num_patches()) {
    throw std::invalid_argument("stage2_forward: mask length mismatch");
  }
  grid.patches = nc::mul_col(grid.patches, mask.st);
  AttentionMask m = build_attention_mask(mask, policy_, vit_.config().n_registers);
  return head(vit_.split_output(vit_.encode(grid.sequence(), &m), grid.num_patches()).cls);
}

Tensor Predictor::stage2_forward(const Image& image, const std::vector<std::uint8_t>& s) const {
  TokenGrid grid = vit_.embed(image);
  if (static_cast<int>(s.size()) != grid.num_patches()) {
    throw std::invalid_argument("stage2_forward: mask length mismatch");
  }
  AttentionMask m = build_attention_mask(s, vit_.config().n_registers, policy_);
  return head(vit_.split_output(vit_.encode(grid.sequence(), &m), grid.num_patches()).cls);
}

Tensor Predictor::dense_forward(const Image& image) const {
  return head(vit_.forward(image).cls);
}

Tensor Predictor::soft_forward(const Image& image, const Tensor& p_fg) const {
  TokenGrid grid = vit_.embed(image);
  grid.patches = nc::mul_col(grid.patches, p_fg);
  return head(vit_.split_output(vit_.encode(grid.sequence(), nullptr), grid.num_patches()).cls);
}

Tensor Predictor::compacted_forward(const Image& image, const std::vector<std::uint8_t>& s) const {
  TokenGrid grid = compact_tokens(vit_.embed(image), s);
  return head(vit_.split_output(vit_.encode(grid.sequence(), nullptr), grid.num_patches()).cls);
}

std::vector<Tensor> Predictor::padded_forward(
    const std::vector<Image>& images, const std::vector<std::vector<std::uint8_t>>& masks) const {
  if (images.size() != masks.size()) throw std::invalid_argument("padded_forward: size mismatch");
  std::vector<TokenGrid> compacted;
  for (std::size_t i = 0; i < images.size(); ++i) {
    compacted.push_back(compact_tokens(vit_.embed(images[i]), masks[i]));
  }
  PaddedBatch batch = pad_batch(compacted);
  std::vector<Tensor> logits;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Tensor enc = vit_.encode(batch.sequences[i], &batch.masks[i]);
    logits.push_back(head(vit_.split_output(enc, batch.k_max).cls));
  }
  return logits;
}

}  // namespace ifam
