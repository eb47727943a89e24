// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ifam/databench.hpp"
#include "ifam/model.hpp"
#include "ifam/selector.hpp"

namespace ifam {

/// Per-part distance thresholds tau_k^q. Distance is 1 - cosine similarity
/// between a token feature and its part prototype.
struct ThresholdTable {
  double q = 100.0;
  std::vector<double> tau;  // tau[k-1] for part k; +inf when part k had no tokens
  std::vector<int> counts;  // calibration tokens per part
  std::string distance = "cosine";

  int num_parts() const { return static_cast<int>(tau.size()); }
};

struct InterventionPlan {
  std::set<int> dropped_parts;
  std::optional<ThresholdTable> table;

  bool empty() const { return dropped_parts.empty() && !table; }
  /// Throws std::invalid_argument for parts outside 1..K, a plan dropping
  /// every part, or a table built for a different K.
  void validate(int n_parts) const;
  std::set<int> kept_parts(int n_parts) const;
};

/// q-th nearest-rank percentile: the ceil(q/100 * n)-th smallest value.
double nearest_rank_percentile(std::vector<double> values, double q);

/// Distance from each token to the prototype of its hard part (0 for
/// background tokens).
std::vector<double> prototype_distances(const nc::Tensor& features, const nc::Tensor& prototypes,
                                        const std::vector<int>& hard);

/// Thresholds from per-part distance samples (index k-1 holds part k).
ThresholdTable thresholds_from_distances(const std::vector<std::vector<double>>& per_part,
                                         double q);

/// Runs the frozen selector over `train` and calibrates tau_k^q.
ThresholdTable calibrate_thresholds(const IfamModel& model, const Split& train, double q);

/// Reassigns to background every token whose distance exceeds its part's
/// threshold. Returns the indices of reassigned tokens.
std::vector<int> remove_tokens(PartAssignment& assignment, const nc::Tensor& features,
                               const nc::Tensor& prototypes, const ThresholdTable& table);

/// Token-removal intervention merged over all parts.
HardTokenMask token_removal(const PartAssignment& assignment, const nc::Tensor& features,
                            const nc::Tensor& prototypes, const ThresholdTable& table);

struct Prediction {
  nc::Tensor logits;
  int predicted = 0;
  std::optional<PartAssignment> assignment;
  std::optional<HardTokenMask> mask;
  std::vector<int> removed_tokens;
};

/// assign_parts -> token removal (if the plan has a table) -> discretize
/// with the kept parts -> stage 2. Inference only; records no graph.
Prediction run_pipeline(const IfamModel& model, const Image& image, const InterventionPlan& plan);

nc::Tensor apply_plan(const IfamModel& model, const Image& image, const InterventionPlan& plan);

enum class MetricKind { wga, aa };
MetricKind metric_from_string(const std::string& s);
std::string to_string(MetricKind m);

using PlanMetric = std::function<double(const InterventionPlan&)>;

struct LooRow {
  std::set<int> dropped;
  double metric = 0;
};

struct LooResult {
  double baseline = 0;
  std::vector<double> without_part;  // index k-1: metric with part k dropped
  std::vector<LooRow> rows;          // every evaluated plan, in order
  InterventionPlan plan;
};

/// Leave-one-out over parts on top of `base`. The plan drops the part with
/// the largest strict improvement (lowest index on ties), or nothing. With
/// `repeated`, greedily continues while a further drop strictly improves.
LooResult loo_part_removal(int n_parts, const PlanMetric& metric,
                           const InterventionPlan& base = {}, bool repeated = false);

LooResult loo_part_removal(const IfamModel& model, const Split& validation, MetricKind kind,
                           const InterventionPlan& base = {}, bool repeated = false);

MetricsReport evaluate_plan(const IfamModel& model, const Split& split,
                            const InterventionPlan& plan, const Split* mixed_same = nullptr,
                            const Split* mixed_rand = nullptr);

/// evaluate_plan on a named split of `dataset`, with BG-GAP whenever the
/// dataset has both mixed splits. Throws std::out_of_range for an unknown
/// split.
MetricsReport evaluate_split(const IfamModel& model, const GroupedDataset& dataset,
                             const std::string& split, const InterventionPlan& plan);

}  // namespace ifam
