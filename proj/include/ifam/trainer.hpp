// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ifam/databench.hpp"
#include "ifam/model.hpp"
#include "ifam/selector.hpp"

namespace ifam {

struct AblationFlags {
  bool no_second_stage = false;
  bool soft_masks = false;
  bool k1_no_shaping = false;
  bool no_stage1_classif = false;
  bool frozen_stage2 = false;

  int count() const;
  bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
  int epochs = 10;
  double lr_stage1 = 1e-3;
  double lr_stage2 = 1e-3;
  bool cosine = true;
  double weight_decay = 0.05;
  double clip = 2.0;
  double part_dropout = 0.3;
  int batch_size = 16;
  std::uint64_t seed = 0;
  // Adaptive update. beta1 = 0 keeps it momentum-free.
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool gumbel = true;
  LossWeights weights;
  AblationFlags ablation;
  // Plain ViT on the whole image (the dense baseline); no selector.
  bool dense_baseline = false;
  // Keeps the stage-1 transformer at its initial weights; prototypes,
  // temperature and the stage-1 head still train.
  bool freeze_stage1_backbone = false;
  // Pulls the blob tokens of planted-bias data onto the last part.
  double planted_part_weight = 0.0;

  /// Throws std::invalid_argument for non-positive clip or batch size,
  /// negative rates, or ablation combinations outside the single-flag rows.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Inference path implied by the training configuration.
InferencePath inference_path(const TrainConfig& config);

/// Model configuration adjusted for the ablation (K=1 for k1_no_shaping).
ModelConfig effective_model_config(const ModelConfig& model, const TrainConfig& config);

/// Loss weights in effect (shaping zeroed for k1_no_shaping, stage-1 CE
/// zeroed for no_stage1_classif).
LossWeights effective_weights(const TrainConfig& config);

struct LossBreakdown {
  std::map<std::string, double> terms;  // batch means
  double total = 0;
};

/// Accumulates the batch loss gradient into the model's parameters (mean
/// over samples) and returns the loss terms. Throws std::runtime_error on a
/// non-finite loss.
LossBreakdown accumulate_gradients(const std::vector<const GroupedSample*>& batch,
                                   IfamModel& model, const TrainConfig& config, nc::Rng& rng);

/// Scales gradients of `names` so their joint L2 norm is at most
/// `max_norm`. Returns the norm before scaling.
double clip_grad_norm(ParamSet& params, const std::vector<std::string>& names, double max_norm);

/// Names of parameters the configuration updates.
std::vector<std::string> trainable_parameters(const IfamModel& model, const TrainConfig& config);

/// Adaptive-moment optimizer state with decoupled weight decay.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& config) : config_(config) {}
  /// One update of `names` with learning-rate multiplier `lr_scale`.
  void step(ParamSet& params, const std::vector<std::string>& names, double lr_scale);
  long steps() const { return t_; }

 private:
  TrainConfig config_;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct StepResult {
  LossBreakdown losses;
  double grad_norm = 0;
};

/// zero_grad, accumulate, clip, update.
StepResult train_step(const std::vector<const GroupedSample*>& batch, IfamModel& model,
                      const TrainConfig& config, Optimizer& optimizer, nc::Rng& rng,
                      double lr_scale = 1.0);

struct EpochLog {
  int epoch = 0;
  double lr_scale = 1.0;
  std::map<std::string, double> losses;
  MetricsReport val;
};

struct FitResult {
  IfamModel model;
  std::vector<EpochLog> log;
  int best_epoch = -1;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Cosine learning-rate multiplier at step t of `total` (1 when disabled).
double lr_multiplier(const TrainConfig& config, long t, long total);

/// Trains on `train`, selects the epoch with the best `val` WGA (then AA,
/// then the earliest) and returns it with parameters rounded to 32-bit floats.
FitResult fit(const Split& train, const Split& val, const ModelConfig& model_config,
              const TrainConfig& config, const EpochCallback& on_epoch = {});
FitResult fit(const GroupedDataset& dataset, const ModelConfig& model_config,
              const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace ifam
