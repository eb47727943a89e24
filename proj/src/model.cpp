// SPDX-License-Identifier: Apache-2.0
#include "ifam/model.hpp"

#include <stdexcept>

namespace ifam {

std::string to_string(InferencePath path) {
  switch (path) {
    case InferencePath::hard:
      return "hard";
    case InferencePath::soft:
      return "soft";
    case InferencePath::stage1_only:
      return "stage1_only";
    case InferencePath::dense:
      return "dense";
  }
  return "hard";
}

InferencePath inference_path_from_string(const std::string& s) {
  if (s == "hard") return InferencePath::hard;
  if (s == "soft") return InferencePath::soft;
  if (s == "stage1_only") return InferencePath::stage1_only;
  if (s == "dense") return InferencePath::dense;
  throw std::invalid_argument("unknown inference path '" + s + "'");
}

IfamModel IfamModel::create(const ModelConfig& config, InferencePath path, std::uint64_t seed) {
  config.validate();
  IfamModel m;
  m.config = config;
  m.path = path;
  nc::Rng rng(seed);
  nc::Rng s1 = rng.fork(1);
  nc::Rng s2 = rng.fork(2);
  // Stage-1 parameters exist for every selector path; the stage-2 ViT for
  // every path that runs it.
  if (m.has_selector()) Selector::init_params(config, m.params, s1);
  if (m.has_predictor()) Predictor::init_params(config, m.params, s2);
  return m;
}

}  // namespace ifam
