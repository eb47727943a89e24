// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "ifam/numcore/tensor.hpp"

namespace ifam {

/// Which keys the special tokens of a masked sequence may read. Live patch
/// queries always see the live patches; the flags cover the rest.
struct SpecialTokenPolicy {
  bool patches_attend_specials = true;
  bool registers_attend_registers = true;
};

/// Additive [T, T] mask over the sequence [patches (N), class, registers (R)].
/// Entries are 0 or nc::kMaskSentinel.
struct AttentionMask {
  nc::Tensor matrix;
  int n_patches = 0;
  int n_registers = 0;

  int seq_len() const { return n_patches + 1 + n_registers; }
  bool blocked(int query, int key) const {
    return matrix.at(query, key) <= nc::kMaskSentinel;
  }
  // 1 for queries with at least one visible key.
  std::vector<double> live_rows() const;
};

/// Patch block: M_ij = -inf if s_i = 0 or s_j = 0. Class and register rows
/// see live patches, the class token and (per policy) the registers. Rows of
/// masked patches are fully blocked.
AttentionMask build_attention_mask(const std::vector<std::uint8_t>& live,
                                   int n_registers,
                                   const SpecialTokenPolicy& policy = {});

}  // namespace ifam
