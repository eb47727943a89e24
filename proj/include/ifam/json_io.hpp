// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "ifam/databench.hpp"
#include "ifam/interventions.hpp"
#include "ifam/selector.hpp"
#include "ifam/trainer.hpp"
#include "ifam/vit.hpp"

namespace ifam {

using Json = nlohmann::json;

/// Malformed or unknown configuration content. The message names the
/// offending key path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Model plus training configuration, the input of `train`.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  bool operator==(const RunConfig&) const = default;
};

// Every reader rejects keys it does not know and fills absent keys with the
// struct defaults.
void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);
void to_json(Json& j, const DatasetSpec& s);
void from_json(const Json& j, DatasetSpec& s);
void to_json(Json& j, const LossWeights& w);
void from_json(const Json& j, LossWeights& w);
void to_json(Json& j, const AblationFlags& a);
void from_json(const Json& j, AblationFlags& a);
void to_json(Json& j, const TrainConfig& c);
void from_json(const Json& j, TrainConfig& c);
void to_json(Json& j, const RunConfig& c);
void from_json(const Json& j, RunConfig& c);
void to_json(Json& j, const MetricsReport& r);
void from_json(const Json& j, MetricsReport& r);

// Plan file: {"dropped_parts": [..], "q": number|null, "tau": [number|null],
// "counts": [..]}. A null tau entry is +inf (a part with no calibration
// tokens); "q": null means no token removal.
void to_json(Json& j, const ThresholdTable& t);
void from_json(const Json& j, ThresholdTable& t);
void to_json(Json& j, const InterventionPlan& p);
void from_json(const Json& j, InterventionPlan& p);

Json loo_to_json(const LooResult& loo, MetricKind metric);

/// One training-log record: {epoch, lr, lr_scale, losses, val}.
Json epoch_log_to_json(const EpochLog& log, const TrainConfig& config);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

template <typename T>
T load_config(const std::string& path) {
  const Json j = read_json_file(path);
  try {
    return j.get<T>();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace ifam
