// SPDX-License-Identifier: Apache-2.0
#include "ifam/interventions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ifam/numcore/ops.hpp"

namespace ifam {

using nc::Tensor;

void InterventionPlan::validate(int n_parts) const {
  for (int p : dropped_parts) {
    if (p < 1 || p > n_parts) {
      throw std::invalid_argument("plan drops part " + std::to_string(p) +
                                  ", model has parts 1.." + std::to_string(n_parts));
    }
  }
  if (static_cast<int>(dropped_parts.size()) >= n_parts) {
    throw std::invalid_argument("plan drops every part");
  }
  if (table) {
    if (table->num_parts() != n_parts) {
      throw std::invalid_argument("threshold table has " + std::to_string(table->num_parts()) +
                                  " parts, model has " + std::to_string(n_parts));
    }
    if (!(table->q > 0 && table->q <= 100)) throw std::invalid_argument("q must be in (0, 100]");
  }
}

std::set<int> InterventionPlan::kept_parts(int n_parts) const {
  std::set<int> kept;
  for (int p = 1; p <= n_parts; ++p)
    if (!dropped_parts.count(p)) kept.insert(p);
  return kept;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::infinity();
  if (!(q > 0 && q <= 100)) throw std::invalid_argument("percentile q must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

std::vector<double> prototype_distances(const Tensor& features, const Tensor& prototypes,
                                        const std::vector<int>& hard) {
  nc::NoGradScope no_grad;
  Tensor cos = nc::matmul_nt(nc::l2_normalize_rows(features), nc::l2_normalize_rows(prototypes));
  std::vector<double> out(hard.size(), 0.0);
  for (std::size_t i = 0; i < hard.size(); ++i) {
    if (hard[i] > 0) out[i] = 1.0 - cos.at(static_cast<int>(i), hard[i]);
  }
  return out;
}

ThresholdTable thresholds_from_distances(const std::vector<std::vector<double>>& per_part,
                                         double q) {
  if (!(q > 0 && q <= 100)) throw std::invalid_argument("q must be in (0, 100]");
  ThresholdTable t;
  t.q = q;
  for (const auto& d : per_part) {
    t.tau.push_back(nearest_rank_percentile(d, q));
    t.counts.push_back(static_cast<int>(d.size()));
  }
  return t;
}

ThresholdTable calibrate_thresholds(const IfamModel& model, const Split& train, double q) {
  if (train.samples.empty()) throw std::invalid_argument("calibrate_thresholds: empty training set");
  if (!model.has_selector()) throw std::invalid_argument("calibrate_thresholds: model has no parts");
  nc::NoGradScope no_grad;
  const Selector selector = model.selector();
  const int k = model.config.n_parts;
  std::vector<std::vector<double>> per_part(static_cast<std::size_t>(k));
  for (const auto& s : train.samples) {
    SelectorOutput out = selector.run(s.image, false, nullptr);
    auto d = prototype_distances(out.vit.patches, selector.prototypes(), out.assignment.hard);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const int part = out.assignment.hard[i];
      if (part > 0) per_part[part - 1].push_back(d[i]);
    }
  }
  return thresholds_from_distances(per_part, q);
}

std::vector<int> remove_tokens(PartAssignment& assignment, const Tensor& features,
                               const Tensor& prototypes, const ThresholdTable& table) {
  if (table.num_parts() != assignment.num_parts()) {
    throw std::invalid_argument("remove_tokens: table/part count mismatch");
  }
  auto d = prototype_distances(features, prototypes, assignment.hard);
  std::vector<int> removed;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int part = assignment.hard[i];
    if (part > 0 && d[i] > table.tau[part - 1]) {
      assignment.hard[i] = 0;
      removed.push_back(static_cast<int>(i));
    }
  }
  return removed;
}

HardTokenMask token_removal(const PartAssignment& assignment, const Tensor& features,
                            const Tensor& prototypes, const ThresholdTable& table) {
  PartAssignment edited = assignment;
  remove_tokens(edited, features, prototypes, table);
  return discretize(edited, all_parts(edited.num_parts()));
}

namespace {

int argmax(const Tensor& logits) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.size()); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

// Foreground rows of removed tokens moved to background.
Tensor strip_tokens(const Tensor& soft, const std::vector<int>& removed) {
  if (removed.empty()) return soft;
  std::vector<double> v(soft.values().begin(), soft.values().end());
  const int parts = soft.dim(0);
  const int n = soft.dim(1);
  for (int i : removed) {
    double moved = 0;
    for (int k = 1; k < parts; ++k) {
      moved += v[k * n + i];
      v[k * n + i] = 0;
    }
    v[i] += moved;
  }
  return Tensor::from(soft.shape(), std::move(v));
}

}  // namespace

Prediction run_pipeline(const IfamModel& model, const Image& image, const InterventionPlan& plan) {
  nc::NoGradScope no_grad;
  Prediction out;
  if (model.path == InferencePath::dense) {
    if (!plan.empty()) throw std::invalid_argument("dense model has no parts to intervene on");
    out.logits = model.predictor().dense_forward(image);
    out.predicted = argmax(out.logits);
    return out;
  }
  const int k = model.config.n_parts;
  plan.validate(k);
  const Selector selector = model.selector();
  SelectorOutput sel = selector.run(image, false, nullptr);
  PartAssignment assignment = sel.assignment;
  if (plan.table) {
    out.removed_tokens =
        remove_tokens(assignment, sel.vit.patches, selector.prototypes(), *plan.table);
  }
  const std::set<int> kept = plan.kept_parts(k);
  HardTokenMask mask = discretize(assignment, kept);

  switch (model.path) {
    case InferencePath::hard:
      out.logits = model.predictor().stage2_forward(image, mask.s);
      break;
    case InferencePath::soft: {
      std::vector<double> p(mask.p_fg.values().begin(), mask.p_fg.values().end());
      for (int i : out.removed_tokens) p[i] = 0;
      out.logits = model.predictor().soft_forward(image, Tensor::from({static_cast<int>(p.size())}, p));
      break;
    }
    case InferencePath::stage1_only: {
      std::vector<double> keep(static_cast<std::size_t>(k), 0.0);
      for (int part : kept) keep[part - 1] = 1.0;
      PartAssignment stripped = assignment;
      stripped.soft = strip_tokens(assignment.soft, out.removed_tokens);
      out.logits = stage1_classify(stripped, sel.vit.patches, selector.head(), keep);
      break;
    }
    case InferencePath::dense:
      break;
  }
  out.predicted = argmax(out.logits);
  out.assignment = std::move(assignment);
  out.mask = std::move(mask);
  return out;
}

Tensor apply_plan(const IfamModel& model, const Image& image, const InterventionPlan& plan) {
  return run_pipeline(model, image, plan).logits;
}

MetricKind metric_from_string(const std::string& s) {
  if (s == "wga") return MetricKind::wga;
  if (s == "aa") return MetricKind::aa;
  throw std::invalid_argument("unknown metric '" + s + "' (expected wga or aa)");
}

std::string to_string(MetricKind m) { return m == MetricKind::wga ? "wga" : "aa"; }

LooResult loo_part_removal(int n_parts, const PlanMetric& metric, const InterventionPlan& base,
                           bool repeated) {
  if (n_parts < 1) throw std::invalid_argument("loo_part_removal: need K >= 1");
  LooResult result;
  result.plan = base;
  result.baseline = metric(base);
  result.rows.push_back({base.dropped_parts, result.baseline});
  double current = result.baseline;
  bool first_pass = true;
  while (true) {
    int best_part = 0;
    double best = current;
    for (int p = 1; p <= n_parts; ++p) {
      if (result.plan.dropped_parts.count(p)) {
        if (first_pass) result.without_part.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      InterventionPlan trial = result.plan;
      trial.dropped_parts.insert(p);
      if (static_cast<int>(trial.dropped_parts.size()) >= n_parts) {
        if (first_pass) result.without_part.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      const double m = metric(trial);
      result.rows.push_back({trial.dropped_parts, m});
      if (first_pass) result.without_part.push_back(m);
      if (m > best) {
        best = m;
        best_part = p;
      }
    }
    first_pass = false;
    if (best_part == 0) break;
    result.plan.dropped_parts.insert(best_part);
    current = best;
    if (!repeated) break;
  }
  return result;
}

MetricsReport evaluate_plan(const IfamModel& model, const Split& split, const InterventionPlan& plan,
                            const Split* mixed_same, const Split* mixed_rand) {
  std::vector<std::vector<std::uint8_t>> masks, truth;
  MetricsReport report = evaluate(
      [&](const GroupedSample& s) {
        Prediction p = run_pipeline(model, s.image, plan);
        if (masks.size() < split.samples.size() && p.mask &&
            s.token_mask.size() == p.mask->s.size()) {
          masks.push_back(p.mask->s);
          truth.push_back(s.token_mask);
        }
        return p.predicted;
      },
      split, mixed_same, mixed_rand);
  if (!masks.empty() && masks.size() == split.samples.size()) {
    report.fg_miou = fg_miou(masks, truth);
  }
  return report;
}

MetricsReport evaluate_split(const IfamModel& model, const GroupedDataset& dataset,
                             const std::string& split, const InterventionPlan& plan) {
  auto it = dataset.splits.find(split);
  if (it == dataset.splits.end()) throw std::out_of_range("dataset has no split '" + split + "'");
  auto same = dataset.splits.find("test-mixed-same");
  auto rand = dataset.splits.find("test-mixed-rand");
  if (same == dataset.splits.end() || rand == dataset.splits.end()) {
    return evaluate_plan(model, it->second, plan);
  }
  return evaluate_plan(model, it->second, plan, &same->second, &rand->second);
}

LooResult loo_part_removal(const IfamModel& model, const Split& validation, MetricKind kind,
                           const InterventionPlan& base, bool repeated) {
  if (!model.has_selector()) throw std::invalid_argument("loo_part_removal: model has no parts");
  auto metric = [&](const InterventionPlan& plan) {
    MetricsReport r = evaluate_plan(model, validation, plan);
    return kind == MetricKind::wga ? r.wga : r.aa;
  };
  return loo_part_removal(model.config.n_parts, metric, base, repeated);
}

}  // namespace ifam
