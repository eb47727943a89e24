// SPDX-License-Identifier: Apache-2.0
#include "ifam/json_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace ifam {

namespace {

// Reads the keys of one JSON object and rejects whatever is left over.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j_.is_object()) throw ConfigError(what_ + ": expected a JSON object");
  }

  void read(const char* key, int& v) {
    if (const Json* x = find(key)) {
      if (!x->is_number_integer()) fail(key, "expected an integer");
      v = x->get<int>();
    }
  }
  void read(const char* key, std::uint64_t& v) {
    if (const Json* x = find(key)) {
      if (!x->is_number_unsigned()) fail(key, "expected a non-negative integer");
      v = x->get<std::uint64_t>();
    }
  }
  void read(const char* key, double& v) {
    if (const Json* x = find(key)) {
      if (!x->is_number()) fail(key, "expected a number");
      v = x->get<double>();
    }
  }
  void read(const char* key, bool& v) {
    if (const Json* x = find(key)) {
      if (!x->is_boolean()) fail(key, "expected true or false");
      v = x->get<bool>();
    }
  }
  void read(const char* key, std::string& v) {
    if (const Json* x = find(key)) {
      if (!x->is_string()) fail(key, "expected a string");
      v = x->get<std::string>();
    }
  }
  template <typename T>
  void read_object(const char* key, T& v) {
    if (const Json* x = find(key)) {
      try {
        v = x->get<T>();
      } catch (const ConfigError& e) {
        throw ConfigError(what_ + "." + key + ": " + e.what());
      }
    }
  }
  // Raw access for fields with their own syntax; null counts as present.
  const Json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(what_ + ": unknown key '" + it.key() + "'");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError(what_ + "." + key + ": " + msg);
  }

 private:
  const Json* find(const char* key) {
    const Json* x = raw(key);
    return (x && !x->is_null()) ? x : nullptr;
  }

  const Json& j_;
  std::string what_;
  std::set<std::string> seen_;
};

template <typename T>
void checked(const T& value, const std::string& what) {
  try {
    value.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> read_optional(ObjectReader& r, const char* key) {
  const Json* x = r.raw(key);
  if (!x || x->is_null()) return std::nullopt;
  if (!x->is_number()) r.fail(key, "expected a number or null");
  return x->get<double>();
}

}  // namespace

void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"image_size", c.image_size}, {"patch_size", c.patch_size},
           {"channels", c.channels},     {"embed_dim", c.embed_dim},
           {"n_heads", c.n_heads},       {"n_layers", c.n_layers},
           {"mlp_ratio", c.mlp_ratio},   {"n_registers", c.n_registers},
           {"n_classes", c.n_classes},   {"n_parts", c.n_parts}};
}

void from_json(const Json& j, ModelConfig& c) {
  ObjectReader r(j, "model");
  r.read("image_size", c.image_size);
  r.read("patch_size", c.patch_size);
  r.read("channels", c.channels);
  r.read("embed_dim", c.embed_dim);
  r.read("n_heads", c.n_heads);
  r.read("n_layers", c.n_layers);
  r.read("mlp_ratio", c.mlp_ratio);
  r.read("n_registers", c.n_registers);
  r.read("n_classes", c.n_classes);
  r.read("n_parts", c.n_parts);
  r.finish();
  checked(c, "model");
}

void to_json(Json& j, const DatasetSpec& s) {
  j = Json{{"n_classes", s.n_classes},   {"n_backgrounds", s.n_backgrounds},
           {"correlation", s.correlation}, {"n_train", s.n_train},
           {"n_val", s.n_val},           {"n_test", s.n_test},
           {"image_size", s.image_size}, {"patch_size", s.patch_size},
           {"seed", s.seed},             {"min_area", s.min_area},
           {"max_area", s.max_area},     {"margin", s.margin},
           {"snap_to_grid", s.snap_to_grid},
           {"planted_blob", s.planted_blob}, {"blob_size", s.blob_size}};
}

void from_json(const Json& j, DatasetSpec& s) {
  ObjectReader r(j, "dataset");
  r.read("n_classes", s.n_classes);
  r.read("n_backgrounds", s.n_backgrounds);
  r.read("correlation", s.correlation);
  r.read("n_train", s.n_train);
  r.read("n_val", s.n_val);
  r.read("n_test", s.n_test);
  r.read("image_size", s.image_size);
  r.read("patch_size", s.patch_size);
  r.read("seed", s.seed);
  r.read("min_area", s.min_area);
  r.read("max_area", s.max_area);
  r.read("margin", s.margin);
  r.read("snap_to_grid", s.snap_to_grid);
  r.read("planted_blob", s.planted_blob);
  r.read("blob_size", s.blob_size);
  r.finish();
  checked(s, "dataset");
}

void to_json(Json& j, const LossWeights& w) {
  j = Json{{"total_variation", w.total_variation},
           {"presence", w.presence},
           {"concentration", w.concentration},
           {"orthogonality", w.orthogonality},
           {"entropy", w.entropy},
           {"background_prior", w.background_prior},
           {"equivariance", w.equivariance},
           {"stage1_ce", w.stage1_ce},
           {"stage2_ce", w.stage2_ce}};
}

void from_json(const Json& j, LossWeights& w) {
  ObjectReader r(j, "weights");
  r.read("total_variation", w.total_variation);
  r.read("presence", w.presence);
  r.read("concentration", w.concentration);
  r.read("orthogonality", w.orthogonality);
  r.read("entropy", w.entropy);
  r.read("background_prior", w.background_prior);
  r.read("equivariance", w.equivariance);
  r.read("stage1_ce", w.stage1_ce);
  r.read("stage2_ce", w.stage2_ce);
  r.finish();
  checked(w, "weights");
}

void to_json(Json& j, const AblationFlags& a) {
  j = Json{{"no_second_stage", a.no_second_stage},
           {"soft_masks", a.soft_masks},
           {"k1_no_shaping", a.k1_no_shaping},
           {"no_stage1_classif", a.no_stage1_classif},
           {"frozen_stage2", a.frozen_stage2}};
}

void from_json(const Json& j, AblationFlags& a) {
  ObjectReader r(j, "ablation");
  r.read("no_second_stage", a.no_second_stage);
  r.read("soft_masks", a.soft_masks);
  r.read("k1_no_shaping", a.k1_no_shaping);
  r.read("no_stage1_classif", a.no_stage1_classif);
  r.read("frozen_stage2", a.frozen_stage2);
  r.finish();
}

void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"epochs", c.epochs},
           {"lr_stage1", c.lr_stage1},
           {"lr_stage2", c.lr_stage2},
           {"cosine", c.cosine},
           {"weight_decay", c.weight_decay},
           {"clip", c.clip},
           {"part_dropout", c.part_dropout},
           {"batch_size", c.batch_size},
           {"seed", c.seed},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"eps", c.eps},
           {"gumbel", c.gumbel},
           {"weights", c.weights},
           {"ablation", c.ablation},
           {"dense_baseline", c.dense_baseline},
           {"freeze_stage1_backbone", c.freeze_stage1_backbone},
           {"planted_part_weight", c.planted_part_weight}};
}

void from_json(const Json& j, TrainConfig& c) {
  ObjectReader r(j, "train");
  r.read("epochs", c.epochs);
  r.read("lr_stage1", c.lr_stage1);
  r.read("lr_stage2", c.lr_stage2);
  r.read("cosine", c.cosine);
  r.read("weight_decay", c.weight_decay);
  r.read("clip", c.clip);
  r.read("part_dropout", c.part_dropout);
  r.read("batch_size", c.batch_size);
  r.read("seed", c.seed);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("eps", c.eps);
  r.read("gumbel", c.gumbel);
  r.read_object("weights", c.weights);
  r.read_object("ablation", c.ablation);
  r.read("dense_baseline", c.dense_baseline);
  r.read("freeze_stage1_backbone", c.freeze_stage1_backbone);
  r.read("planted_part_weight", c.planted_part_weight);
  r.finish();
  checked(c, "train");
}

void to_json(Json& j, const RunConfig& c) { j = Json{{"model", c.model}, {"train", c.train}}; }

void from_json(const Json& j, RunConfig& c) {
  ObjectReader r(j, "config");
  r.read_object("model", c.model);
  r.read_object("train", c.train);
  r.finish();
}

void to_json(Json& j, const MetricsReport& r) {
  Json groups = Json::object();
  for (const auto& [g, acc] : r.group_accuracy) groups[std::to_string(g)] = acc;
  Json counts = Json::object();
  for (const auto& [g, n] : r.group_counts) counts[std::to_string(g)] = n;
  j = Json{{"n", r.n},
           {"aa", r.aa},
           {"wga", r.wga},
           {"group_accuracy", groups},
           {"group_counts", counts},
           {"bg_gap", optional_number(r.bg_gap)},
           {"fg_miou", optional_number(r.fg_miou)},
           {"kp_error", optional_number(r.kp_error)}};
}

void from_json(const Json& j, MetricsReport& m) {
  ObjectReader r(j, "report");
  r.read("n", m.n);
  r.read("aa", m.aa);
  r.read("wga", m.wga);
  auto read_map = [&](const char* key, auto& out) {
    const Json* x = r.raw(key);
    if (!x || x->is_null()) return;
    if (!x->is_object()) r.fail(key, "expected an object");
    for (auto it = x->begin(); it != x->end(); ++it) {
      if (!it->is_number()) r.fail(key, "expected numeric values");
      out[std::stoi(it.key())] = it->get<typename std::decay_t<decltype(out)>::mapped_type>();
    }
  };
  read_map("group_accuracy", m.group_accuracy);
  read_map("group_counts", m.group_counts);
  m.bg_gap = read_optional(r, "bg_gap");
  m.fg_miou = read_optional(r, "fg_miou");
  m.kp_error = read_optional(r, "kp_error");
  r.finish();
}

void to_json(Json& j, const ThresholdTable& t) {
  Json tau = Json::array();
  for (double v : t.tau) tau.push_back(std::isfinite(v) ? Json(v) : Json(nullptr));
  j = Json{{"q", t.q}, {"tau", tau}, {"counts", t.counts}, {"distance", t.distance}};
}

namespace {

void read_table_fields(ObjectReader& r, ThresholdTable& t) {
  const Json* tau = r.raw("tau");
  if (!tau || !tau->is_array()) r.fail("tau", "expected an array");
  t.tau.clear();
  for (const Json& v : *tau) {
    if (v.is_null()) {
      t.tau.push_back(std::numeric_limits<double>::infinity());
    } else if (v.is_number()) {
      t.tau.push_back(v.get<double>());
    } else {
      r.fail("tau", "entries must be numbers or null");
    }
  }
  t.counts.clear();
  if (const Json* counts = r.raw("counts"); counts && !counts->is_null()) {
    if (!counts->is_array()) r.fail("counts", "expected an array");
    for (const Json& v : *counts) {
      if (!v.is_number_integer()) r.fail("counts", "entries must be integers");
      t.counts.push_back(v.get<int>());
    }
    if (t.counts.size() != t.tau.size()) r.fail("counts", "length differs from tau");
  }
  r.read("distance", t.distance);
  if (t.distance != "cosine") r.fail("distance", "only \"cosine\" is supported");
}

}  // namespace

void from_json(const Json& j, ThresholdTable& t) {
  ObjectReader r(j, "table");
  r.read("q", t.q);
  read_table_fields(r, t);
  r.finish();
}

void to_json(Json& j, const InterventionPlan& p) {
  j = Json{{"dropped_parts", p.dropped_parts}};
  if (p.table) {
    Json t = *p.table;
    for (auto it = t.begin(); it != t.end(); ++it) j[it.key()] = it.value();
  } else {
    j["q"] = nullptr;
  }
}

void from_json(const Json& j, InterventionPlan& p) {
  ObjectReader r(j, "plan");
  p = InterventionPlan{};
  if (const Json* d = r.raw("dropped_parts"); d && !d->is_null()) {
    if (!d->is_array()) r.fail("dropped_parts", "expected an array");
    for (const Json& v : *d) {
      if (!v.is_number_integer()) r.fail("dropped_parts", "entries must be integers");
      p.dropped_parts.insert(v.get<int>());
    }
  }
  const Json* q = r.raw("q");
  if (q && !q->is_null()) {
    if (!q->is_number()) r.fail("q", "expected a number or null");
    ThresholdTable t;
    t.q = q->get<double>();
    read_table_fields(r, t);
    p.table = std::move(t);
  } else {
    for (const char* key : {"tau", "counts", "distance"}) {
      const Json* x = r.raw(key);
      if (x && !x->is_null()) r.fail(key, "given without q");
    }
  }
  r.finish();
}

Json loo_to_json(const LooResult& loo, MetricKind metric) {
  Json rows = Json::array();
  for (const LooRow& row : loo.rows) {
    rows.push_back(Json{{"dropped_parts", row.dropped}, {"metric", row.metric}});
  }
  Json without = Json::array();
  for (double v : loo.without_part) without.push_back(std::isnan(v) ? Json(nullptr) : Json(v));
  return Json{{"metric", to_string(metric)},
              {"baseline", loo.baseline},
              {"without_part", without},
              {"rows", rows},
              {"plan", loo.plan}};
}

Json epoch_log_to_json(const EpochLog& log, const TrainConfig& config) {
  return Json{{"epoch", log.epoch},
              {"lr_scale", log.lr_scale},
              {"lr", Json{{"stage1", config.lr_stage1 * log.lr_scale},
                          {"stage2", config.lr_stage2 * log.lr_scale}}},
              {"losses", log.losses},
              {"val", log.val}};
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace ifam
