// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "ifam/params.hpp"
#include "ifam/predictor.hpp"
#include "ifam/selector.hpp"
#include "ifam/vit.hpp"

namespace ifam {

/// How a trained model produces its prediction.
enum class InferencePath {
  hard,         // selector -> binary mask -> masked stage 2
  soft,         // stage 2 over p_fg-weighted tokens, no attention mask
  stage1_only,  // part-pooled stage-1 head (late masking)
  dense,        // plain ViT classifier, no selector
};

std::string to_string(InferencePath path);
InferencePath inference_path_from_string(const std::string& s);

/// Both stages' parameters plus the configuration they were built for.
struct IfamModel {
  ModelConfig config;
  InferencePath path = InferencePath::hard;
  ParamSet params;

  static IfamModel create(const ModelConfig& config, InferencePath path, std::uint64_t seed);

  bool has_selector() const { return path != InferencePath::dense; }
  bool has_predictor() const { return path != InferencePath::stage1_only; }
  Selector selector() const { return Selector(config, params); }
  Predictor predictor() const { return Predictor(config, params); }

  IfamModel clone() const { return IfamModel{config, path, params.clone()}; }
};

}  // namespace ifam
