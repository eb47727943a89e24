// SPDX-License-Identifier: Apache-2.0
#include "ifam/attention_mask.hpp"

#include <stdexcept>

namespace ifam {

std::vector<double> AttentionMask::live_rows() const {
  const int t = seq_len();
  std::vector<double> out(static_cast<std::size_t>(t), 0.0);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < t; ++j) {
      if (!blocked(i, j)) {
        out[i] = 1.0;
        break;
      }
    }
  }
  return out;
}

AttentionMask build_attention_mask(const std::vector<std::uint8_t>& live,
                                   int n_registers,
                                   const SpecialTokenPolicy& policy) {
  if (n_registers < 0) throw std::invalid_argument("negative register count");
  const int n = static_cast<int>(live.size());
  const int t = n + 1 + n_registers;
  const int cls = n;
  std::vector<double> m(static_cast<std::size_t>(t) * t, nc::kMaskSentinel);
  auto allow = [&](int q, int k) { m[static_cast<std::size_t>(q) * t + k] = 0.0; };
  auto is_register = [&](int i) { return i > cls; };

  for (int q = 0; q < t; ++q) {
    if (q < n && !live[q]) continue;  // dead query row
    for (int k = 0; k < n; ++k) {
      if (live[k]) allow(q, k);
    }
    const bool special_query = q >= n;
    if (special_query || policy.patches_attend_specials) {
      allow(q, cls);
      for (int r = cls + 1; r < t; ++r) {
        if (is_register(q) && q != r && !policy.registers_attend_registers) continue;
        allow(q, r);
      }
    }
  }
  return AttentionMask{nc::Tensor::from({t, t}, std::move(m)), n, n_registers};
}

}  // namespace ifam
