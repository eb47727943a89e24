// SPDX-License-Identifier: Apache-2.0
#include "ifam/trainer.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ifam/interventions.hpp"
#include "ifam/numcore/ops.hpp"

namespace ifam {

using nc::Tensor;

int AblationFlags::count() const {
  return int(no_second_stage) + int(soft_masks) + int(k1_no_shaping) + int(no_stage1_classif) +
         int(frozen_stage2);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(lr_stage1 >= 0 && lr_stage2 >= 0)) throw std::invalid_argument("learning rates must be >= 0");
  if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(clip > 0)) throw std::invalid_argument("clip must be > 0");
  if (!(part_dropout >= 0 && part_dropout <= 1)) throw std::invalid_argument("part_dropout not in [0,1]");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("betas not in [0,1)");
  if (!(eps > 0)) throw std::invalid_argument("eps must be > 0");
  if (!(planted_part_weight >= 0)) throw std::invalid_argument("planted_part_weight must be >= 0");
  weights.validate();
  if (ablation.count() > 1) {
    throw std::invalid_argument("at most one ablation flag may be set");
  }
  if (dense_baseline && ablation.count() > 0) {
    throw std::invalid_argument("dense_baseline cannot be combined with ablation flags");
  }
}

InferencePath inference_path(const TrainConfig& c) {
  if (c.dense_baseline) return InferencePath::dense;
  if (c.ablation.no_second_stage) return InferencePath::stage1_only;
  if (c.ablation.soft_masks) return InferencePath::soft;
  return InferencePath::hard;
}

ModelConfig effective_model_config(const ModelConfig& model, const TrainConfig& config) {
  ModelConfig m = model;
  if (config.ablation.k1_no_shaping) m.n_parts = 1;
  return m;
}

LossWeights effective_weights(const TrainConfig& config) {
  LossWeights w = config.weights;
  if (config.ablation.k1_no_shaping) {
    w.total_variation = w.presence = w.concentration = w.orthogonality = w.entropy =
        w.background_prior = w.equivariance = 0;
  }
  if (config.ablation.no_stage1_classif) w.stage1_ce = 0;
  if (config.ablation.no_second_stage) w.stage2_ce = 0;
  return w;
}

namespace {

Tensor ce(const Tensor& logits, int label) {
  return nc::cross_entropy(nc::reshape(logits, {1, static_cast<int>(logits.size())}), {label});
}

// Binary cross-entropy of the last part's assignment against the planted
// blob tokens.
Tensor planted_loss(const PartAssignment& a, const std::vector<std::uint8_t>& spurious) {
  const int k = a.num_parts();
  const int n = a.num_tokens();
  Tensor row = nc::reshape(nc::slice_rows(a.soft, k, 1), {n});
  std::vector<double> ind(spurious.begin(), spurious.end());
  std::vector<double> inv(ind.size());
  for (std::size_t i = 0; i < ind.size(); ++i) inv[i] = 1.0 - ind[i];
  Tensor pos = nc::mul(nc::log(nc::add_scalar(row, 1e-6)), Tensor::from({n}, ind));
  Tensor neg = nc::mul(nc::log(nc::add_scalar(nc::add_scalar(nc::scale(row, -1.0), 1.0), 1e-6)),
                       Tensor::from({n}, inv));
  return nc::scale(nc::sum(nc::add(pos, neg)), -1.0 / n);
}

void add_term(std::vector<Tensor>& terms, LossBreakdown& out, const std::string& name,
              const Tensor& value, double weight, double inv_batch) {
  out.terms[name] += value.item() * inv_batch;
  if (weight != 0) terms.push_back(nc::scale(value, weight));
}

bool is_stage2_backbone(const std::string& name) {
  return name.rfind(Predictor::kPrefix, 0) == 0 && name.find("head_") == std::string::npos;
}

bool is_stage1_backbone(const std::string& name) {
  if (name.rfind(Selector::kPrefix, 0) != 0) return false;
  const std::string rest = name.substr(std::string(Selector::kPrefix).size());
  return rest != "prototypes" && rest != "log_tau" && rest != "modulation" && rest != "head_w" &&
         rest != "head_b";
}

}  // namespace

LossBreakdown accumulate_gradients(const std::vector<const GroupedSample*>& batch,
                                   IfamModel& model, const TrainConfig& config, nc::Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("accumulate_gradients: empty batch");
  const LossWeights w = effective_weights(config);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  LossBreakdown out;
  const ModelConfig& mc = model.config;
  const auto trainable = trainable_parameters(model, config);
  const std::set<std::string> on(trainable.begin(), trainable.end());
  for (auto& [name, t] : model.params) t.set_requires_grad(on.count(name) > 0);

  for (const GroupedSample* s : batch) {
    std::vector<Tensor> terms;
    if (model.path == InferencePath::dense) {
      add_term(terms, out, "stage2_ce", ce(model.predictor().dense_forward(s->image), s->label),
               w.stage2_ce, inv_batch);
    } else {
      const Selector selector = model.selector();
      // Priors and the stage-1 head see the noise-free assignment; Gumbel
      // noise only perturbs the sampled mask.
      SelectorOutput sel = selector.run(s->image, false, nullptr);
      const PartAssignment& a = sel.assignment;
      Tensor tau = selector.temperature();
      const Tensor& feats = sel.vit.patches;
      const PartAssignment sampled =
          config.gumbel ? assign_parts(feats, selector.prototypes(), tau, true, &rng) : a;
      ShapingLosses shaping = shaping_losses(a, selector.prototypes(), mc.grid(), mc.grid());
      add_term(terms, out, "total_variation", shaping.total_variation, w.total_variation, inv_batch);
      add_term(terms, out, "presence", shaping.presence, w.presence, inv_batch);
      add_term(terms, out, "concentration", shaping.concentration, w.concentration, inv_batch);
      add_term(terms, out, "orthogonality", shaping.orthogonality, w.orthogonality, inv_batch);
      add_term(terms, out, "entropy", shaping.entropy, w.entropy, inv_batch);
      add_term(terms, out, "background_prior", shaping.background_prior, w.background_prior,
               inv_batch);

      if (w.equivariance != 0) {
        const int g = mc.grid();
        const int sy = rng.uniform_int(2 * g - 1) - (g - 1);
        const int sx = rng.uniform_int(2 * g - 1) - (g - 1);
        Image rolled = roll_image(s->image, sy * mc.patch_size, sx * mc.patch_size);
        PartAssignment moved = assign_parts(selector.vit().forward(rolled).patches,
                                            selector.prototypes(), tau, false, nullptr);
        add_term(terms, out, "equivariance", equivariance_loss(a, moved, g, g, sy, sx),
                 w.equivariance, inv_batch);
      }

      const std::set<int> kept =
          part_dropout(all_parts(mc.n_parts), config.part_dropout, rng, true);
      if (w.stage1_ce != 0) {
        std::vector<double> keep(static_cast<std::size_t>(mc.n_parts), 0.0);
        for (int p : kept) keep[p - 1] = 1.0;
        add_term(terms, out, "stage1_ce",
                 ce(stage1_classify(a, feats, selector.head(), keep), s->label),
                 w.stage1_ce, inv_batch);
      }
      if (model.has_predictor() && w.stage2_ce != 0) {
        HardTokenMask mask = discretize(sampled, kept);
        Tensor logits = model.path == InferencePath::soft
                            ? model.predictor().soft_forward(s->image, mask.p_fg)
                            : model.predictor().stage2_forward(s->image, mask);
        add_term(terms, out, "stage2_ce", ce(logits, s->label), w.stage2_ce, inv_batch);
      }
      if (config.planted_part_weight > 0 && !s->spurious_tokens.empty()) {
        add_term(terms, out, "planted", planted_loss(a, s->spurious_tokens),
                 config.planted_part_weight, inv_batch);
      }
    }
    if (terms.empty()) continue;
    Tensor total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = nc::add(total, terms[i]);
    const double value = total.item();
    if (!std::isfinite(value)) {
      std::string detail;
      for (const auto& [k, v] : out.terms) detail += " " + k + "=" + std::to_string(v);
      throw std::runtime_error("non-finite loss on sample " + s->id + ":" + detail);
    }
    out.total += value * inv_batch;
    if (total.requires_grad()) nc::backward(nc::scale(total, inv_batch));
  }
  return out;
}

double clip_grad_norm(ParamSet& params, const std::vector<std::string>& names, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  double sq = 0;
  for (const auto& n : names)
    for (double g : params.get(n).grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& n : names)
      for (double& g : params.get(n).mutable_grad()) g *= f;
  }
  return norm;
}

std::vector<std::string> trainable_parameters(const IfamModel& model, const TrainConfig& config) {
  std::vector<std::string> names;
  for (const auto& [name, t] : model.params) {
    if (config.ablation.frozen_stage2 && is_stage2_backbone(name)) continue;
    if (config.freeze_stage1_backbone && is_stage1_backbone(name)) continue;
    if (config.ablation.no_stage1_classif &&
        (name == "stage1.head_w" || name == "stage1.head_b" || name == "stage1.modulation")) {
      continue;
    }
    names.push_back(name);
  }
  return names;
}

void Optimizer::step(ParamSet& params, const std::vector<std::string>& names, double lr_scale) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& name : names) {
    Tensor& p = params.get(name);
    const double base = name.rfind(Selector::kPrefix, 0) == 0 ? config_.lr_stage1 : config_.lr_stage2;
    const double lr = base * lr_scale;
    const bool decay = p.rank() >= 2 && name.find("_w") != std::string::npos;
    auto g = p.grad();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto x = p.mutable_values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      if (decay) x[i] -= lr * config_.weight_decay * x[i];
      x[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

StepResult train_step(const std::vector<const GroupedSample*>& batch, IfamModel& model,
                      const TrainConfig& config, Optimizer& optimizer, nc::Rng& rng,
                      double lr_scale) {
  model.params.zero_grad();
  StepResult r;
  r.losses = accumulate_gradients(batch, model, config, rng);
  const auto names = trainable_parameters(model, config);
  r.grad_norm = clip_grad_norm(model.params, names, config.clip);
  optimizer.step(model.params, names, lr_scale);
  return r;
}

double lr_multiplier(const TrainConfig& config, long t, long total) {
  if (!config.cosine || total <= 0) return 1.0;
  return 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(total)));
}

FitResult fit(const Split& train, const Split& val, const ModelConfig& model_config,
              const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train.samples.empty()) throw std::invalid_argument("fit: empty training split");
  const ModelConfig mc = effective_model_config(model_config, config);
  nc::Rng root(config.seed);
  FitResult result{IfamModel::create(mc, inference_path(config), root.fork(1).next_u64()), {}, -1};
  result.model.params.snap_to_float();
  if (config.epochs == 0) return result;

  nc::Rng shuffle_rng = root.fork(2);
  nc::Rng noise_rng = root.fork(3);
  Optimizer optimizer(config);
  std::vector<int> order(train.samples.size());
  const long per_epoch =
      (static_cast<long>(order.size()) + config.batch_size - 1) / config.batch_size;
  const long total_steps = per_epoch * config.epochs;
  long t = 0;
  double best_wga = -1, best_aa = -1;
  ParamSet best = result.model.params.clone();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);
    EpochLog entry;
    entry.epoch = epoch;
    entry.lr_scale = lr_multiplier(config, t, total_steps);
    double weight = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<const GroupedSample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(&train.samples[order[i]]);
      }
      StepResult step = train_step(batch, result.model, config, optimizer, noise_rng,
                                   lr_multiplier(config, t, total_steps));
      ++t;
      const double bw = static_cast<double>(batch.size());
      for (const auto& [k, v] : step.losses.terms) entry.losses[k] += v * bw;
      entry.losses["total"] += step.losses.total * bw;
      weight += bw;
    }
    for (auto& [k, v] : entry.losses) v /= weight;
    if (!val.samples.empty()) entry.val = evaluate_plan(result.model, val, {});
    spdlog::info("epoch {} loss {:.4f} val aa {:.4f} wga {:.4f} miou {:.3f}", epoch,
                 entry.losses["total"], entry.val.aa, entry.val.wga, entry.val.fg_miou.value_or(0));
    const bool better = entry.val.wga > best_wga ||
                        (entry.val.wga == best_wga && entry.val.aa > best_aa);
    if (val.samples.empty() || better) {
      best_wga = entry.val.wga;
      best_aa = entry.val.aa;
      best = result.model.params.clone();
      result.best_epoch = epoch;
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  result.model.params.copy_values_from(best);
  result.model.params.snap_to_float();
  return result;
}

FitResult fit(const GroupedDataset& dataset, const ModelConfig& model_config,
              const TrainConfig& config, const EpochCallback& on_epoch) {
  return fit(dataset.split("train"), dataset.split("val"), model_config, config, on_epoch);
}

}  // namespace ifam
