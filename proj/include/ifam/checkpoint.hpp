// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifam/model.hpp"

namespace ifam {

/// Corrupt, truncated or mismatched checkpoint data.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout, all integers little-endian:
//   "IFAM" | u32 version | u32 header length | header JSON
//   | f32 blobs | u32 CRC-32 of every preceding byte
// The header holds {"model": config, "path": inference path, "tensors":
// [{name, shape, dtype, offset}]}; offsets count bytes from the first blob.
// Values are stored as 32-bit floats, so a model whose parameters are
// already float-exact (fit() output) round-trips bit for bit.
std::vector<std::uint8_t> serialize_checkpoint(const IfamModel& model);
IfamModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const IfamModel& model, const std::string& path);
IfamModel load_checkpoint(const std::string& path);

}  // namespace ifam
