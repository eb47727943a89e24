// SPDX-License-Identifier: Apache-2.0
#include "ifam/databench.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ifam/numcore/rng.hpp"

namespace ifam {
namespace {

using Rgb = std::array<int, 3>;

struct Foreground {
  int label = 0;
  std::vector<std::uint8_t> mask;
  Rgb color{};
  std::vector<Keypoint> keypoints;
};

// Filled shape of the given class centered at (cx, cy) with area `area`.
bool inside_shape(int label, double size, double cx, double cy, double px, double py) {
  const double dx = px - cx;
  const double dy = py - cy;
  switch (label % 4) {
    case 0:  // square, size = side
      return std::abs(dx) <= size / 2 && std::abs(dy) <= size / 2;
    case 1:  // disc, size = diameter
      return dx * dx + dy * dy <= size * size / 4;
    case 2: {  // upright triangle, size = base = height
      const double t = (dy + size / 2) / size;  // 0 at apex, 1 at base
      return t >= 0 && t <= 1 && std::abs(dx) <= t * size / 2;
    }
    default: {  // plus sign, size = span, arm width size / 3
      const double w = size / 6;
      return (std::abs(dx) <= w && std::abs(dy) <= size / 2) ||
             (std::abs(dy) <= w && std::abs(dx) <= size / 2);
    }
  }
}

double size_for_area(int label, double area) {
  switch (label % 4) {
    case 0:
      return std::sqrt(area);
    case 1:
      return 2 * std::sqrt(area / std::numbers::pi);
    case 2:
      return std::sqrt(2 * area);
    default:
      return 3 * std::sqrt(area / 5);
  }
}

Foreground draw_foreground(const DatasetSpec& spec, int label, nc::Rng& rng) {
  const int s = spec.image_size;
  const double area = rng.uniform(spec.min_area, spec.max_area) * s * s;
  const double size = size_for_area(label, area);
  const double room = s - 2.0 * spec.margin;
  if (size + 1 > room) {
    throw std::invalid_argument("generate: shape of size " + std::to_string(size) +
                                " px does not fit the " + std::to_string(room) + " px field");
  }
  const double lo = spec.margin + size / 2;
  const double hi = s - spec.margin - size / 2 - 1;
  const double cx = rng.uniform(lo, hi);
  const double cy = rng.uniform(lo, hi);

  Foreground fg;
  fg.label = label;
  fg.mask.assign(static_cast<std::size_t>(s) * s, 0);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      if (inside_shape(label, size, cx, cy, x + 0.5, y + 0.5)) fg.mask[y * s + x] = 1;
  if (spec.snap_to_grid) {
    const int ps = spec.patch_size, g = s / ps;
    std::vector<std::uint8_t> tokens = token_mask_from_pixels(fg.mask, s, ps);
    if (std::none_of(tokens.begin(), tokens.end(), [](std::uint8_t v) { return v; }))
      tokens[static_cast<int>(cy) / ps * g + static_cast<int>(cx) / ps] = 1;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) fg.mask[y * s + x] = tokens[(y / ps) * g + x / ps];
  }
  double sx = 0, sy = 0;
  int count = 0;
  int top = -1;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      if (!fg.mask[y * s + x]) continue;
      sx += x + 0.5;
      sy += y + 0.5;
      ++count;
      if (top < 0) top = y * s + x;
    }
  }
  if (count == 0) throw std::logic_error("generate: empty shape raster");
  for (auto& c : fg.color) c = 170 + rng.uniform_int(86);
  fg.keypoints = {{sx / count, sy / count},
                  {static_cast<double>(top % s) + 0.5, static_cast<double>(top / s) + 0.5}};
  return fg;
}

constexpr std::array<std::array<Rgb, 2>, 4> kTextures = {{
    {{{40, 140, 60}, {40, 140, 60}}},    // solid green
    {{{30, 60, 170}, {90, 130, 230}}},   // blue horizontal stripes
    {{{150, 80, 20}, {200, 130, 60}}},   // brown vertical stripes
    {{{110, 40, 130}, {60, 20, 80}}},    // purple checker
}};

constexpr std::array<Rgb, 4> kBlobColors = {{{230, 30, 30}, {30, 200, 230}, {240, 200, 20},
                                             {20, 20, 20}}};

Rgb texture_at(int background, int x, int y) {
  const auto& t = kTextures[static_cast<std::size_t>(background % 4)];
  switch (background % 4) {
    case 1:
      return t[(y / 2) % 2];
    case 2:
      return t[(x / 2) % 2];
    case 3:
      return t[((x / 4) + (y / 4)) % 2];
    default:
      return t[0];
  }
}

std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

GroupedSample composite(const DatasetSpec& spec, const Foreground& fg, int background,
                        nc::Rng& rng) {
  const int s = spec.image_size;
  GroupedSample out;
  out.label = fg.label;
  out.background = background;
  out.group = fg.label * spec.n_backgrounds + background;
  out.image = Image(3, s, s);
  out.pixel_mask = fg.mask;
  out.keypoints = fg.keypoints;

  std::vector<std::uint8_t> blob;
  if (spec.planted_blob) {
    blob.assign(static_cast<std::size_t>(s) * s, 0);
    const int b = spec.blob_size;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw std::invalid_argument("generate: no room for the planted blob");
      // Blob corners sit on the patch grid so its tokens are exact.
      const int ps = spec.patch_size;
      const int first = (spec.margin + ps - 1) / ps;
      const int slots = std::max(1, (s - spec.margin - b) / ps - first + 1);
      const int bx = (first + rng.uniform_int(slots)) * ps;
      const int by = (first + rng.uniform_int(slots)) * ps;
      bool clear = true;
      for (int y = by; y < by + b && clear; ++y)
        for (int x = bx; x < bx + b && clear; ++x)
          if (fg.mask[y * s + x]) clear = false;
      if (!clear) continue;
      for (int y = by; y < by + b; ++y)
        for (int x = bx; x < bx + b; ++x) blob[y * s + x] = 1;
      break;
    }
    out.spurious_tokens = token_mask_from_pixels(blob, s, spec.patch_size);
  }

  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      Rgb c;
      if (fg.mask[y * s + x]) {
        c = fg.color;
      } else if (spec.planted_blob) {
        c = blob[y * s + x] ? kBlobColors[static_cast<std::size_t>(background % 4)]
                            : Rgb{128, 128, 128};
      } else {
        c = texture_at(background, x, y);
      }
      for (int ch = 0; ch < 3; ++ch) {
        out.image.at(ch, y, x) = clamp_u8(c[ch] + rng.uniform_int(21) - 10);
      }
    }
  }
  out.token_mask = token_mask_from_pixels(out.pixel_mask, s, spec.patch_size);
  return out;
}

enum class BackgroundRule { correlated, paired, uniform };

int draw_background(const DatasetSpec& spec, int label, BackgroundRule rule, nc::Rng& rng) {
  const int paired = paired_background(label, spec.n_backgrounds);
  switch (rule) {
    case BackgroundRule::paired:
      return paired;
    case BackgroundRule::uniform:
      return rng.uniform_int(spec.n_backgrounds);
    case BackgroundRule::correlated:
      break;
  }
  if (spec.n_backgrounds == 1 || rng.bernoulli(spec.correlation)) return paired;
  const int other = rng.uniform_int(spec.n_backgrounds - 1);
  return other >= paired ? other + 1 : other;
}

Split make_split(const DatasetSpec& spec, const std::string& name, int count, int stream,
                 BackgroundRule rule) {
  Split split;
  split.name = name;
  const nc::Rng base(spec.seed);
  for (int i = 0; i < count; ++i) {
    nc::Rng rng = base.fork(static_cast<std::uint64_t>(stream) * 1000003ull + i);
    const int label = rng.uniform_int(spec.n_classes);
    Foreground fg = draw_foreground(spec, label, rng);
    const int bg = draw_background(spec, label, rule, rng);
    GroupedSample s = composite(spec, fg, bg, rng);
    s.id = name + "-" + std::to_string(i);
    split.samples.push_back(std::move(s));
  }
  return split;
}

}  // namespace

void DatasetSpec::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("DatasetSpec: ") + what);
  };
  need(n_classes >= 1 && n_classes <= 4, "n_classes must be in 1..4");
  need(n_backgrounds >= 1 && n_backgrounds <= 4, "n_backgrounds must be in 1..4");
  need(correlation >= 0 && correlation <= 1, "correlation must be in [0,1]");
  need(n_train >= 0 && n_val >= 0 && n_test >= 0, "negative split size");
  need(image_size > 0 && patch_size > 0 && image_size % patch_size == 0,
       "image_size must be a positive multiple of patch_size");
  need(min_area > 0 && max_area >= min_area && max_area < 1, "bad area range");
  need(margin >= 0 && 2 * margin < image_size, "bad margin");
  need(!planted_blob || blob_size > 0, "blob_size must be positive");
}

const Split& GroupedDataset::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw std::out_of_range("dataset has no split '" + name + "'");
  return it->second;
}

std::string class_name(int label) {
  static const char* const kNames[] = {"square", "disc", "triangle", "plus"};
  return kNames[((label % 4) + 4) % 4];
}

int paired_background(int label, int n_backgrounds) { return label % n_backgrounds; }

GroupedDataset generate(const DatasetSpec& spec) {
  spec.validate();
  GroupedDataset ds;
  ds.spec = spec;
  ds.splits["train"] = make_split(spec, "train", spec.n_train, 0, BackgroundRule::correlated);
  ds.splits["val"] = make_split(spec, "val", spec.n_val, 1, BackgroundRule::uniform);
  ds.splits["test-iid"] =
      make_split(spec, "test-iid", spec.n_test, 2, BackgroundRule::correlated);
  // Same foregrounds (same stream), recomposited.
  ds.splits["test-mixed-same"] =
      make_split(spec, "test-mixed-same", spec.n_test, 3, BackgroundRule::paired);
  ds.splits["test-mixed-rand"] =
      make_split(spec, "test-mixed-rand", spec.n_test, 3, BackgroundRule::uniform);
  return ds;
}

std::vector<std::uint8_t> token_mask_from_pixels(const std::vector<std::uint8_t>& pixels,
                                                 int image_size, int patch_size) {
  if (pixels.size() != static_cast<std::size_t>(image_size) * image_size ||
      image_size % patch_size != 0) {
    throw std::invalid_argument("token_mask_from_pixels: geometry mismatch");
  }
  const int g = image_size / patch_size;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(g) * g, 0);
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      int on = 0;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          on += pixels[(gy * patch_size + y) * image_size + gx * patch_size + x] ? 1 : 0;
      out[gy * g + gx] = 2 * on > patch_size * patch_size ? 1 : 0;
    }
  }
  return out;
}

MetricsReport report_from_predictions(const std::vector<int>& predicted,
                                      const std::vector<GroupedSample>& samples) {
  if (predicted.size() != samples.size()) {
    throw std::invalid_argument("report: prediction count mismatch");
  }
  if (samples.empty()) throw std::invalid_argument("report: empty split");
  MetricsReport r;
  r.n = static_cast<int>(samples.size());
  std::map<int, int> correct;
  int total_correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.group < 0) throw std::invalid_argument("report: sample " + s.id + " has no group");
    const int ok = predicted[i] == s.label ? 1 : 0;
    r.group_counts[s.group] += 1;
    correct[s.group] += ok;
    total_correct += ok;
  }
  r.aa = static_cast<double>(total_correct) / r.n;
  r.wga = 1.0;
  for (const auto& [g, n] : r.group_counts) {
    const double acc = static_cast<double>(correct[g]) / n;
    r.group_accuracy[g] = acc;
    r.wga = std::min(r.wga, acc);
  }
  return r;
}

double bg_gap(double mixed_same_accuracy, double mixed_rand_accuracy) {
  return mixed_same_accuracy - mixed_rand_accuracy;
}

MetricsReport evaluate(const Classifier& classify, const Split& split, const Split* mixed_same,
                       const Split* mixed_rand) {
  auto predict_all = [&](const Split& s) {
    std::vector<int> out;
    out.reserve(s.samples.size());
    for (const auto& sample : s.samples) out.push_back(classify(sample));
    return out;
  };
  MetricsReport r = report_from_predictions(predict_all(split), split.samples);
  if (mixed_same && mixed_rand) {
    const double ms = report_from_predictions(predict_all(*mixed_same), mixed_same->samples).aa;
    const double mr = mixed_rand == &split
                          ? r.aa
                          : report_from_predictions(predict_all(*mixed_rand), mixed_rand->samples).aa;
    r.bg_gap = bg_gap(ms, mr);
  }
  return r;
}

double fg_miou(const std::vector<std::vector<std::uint8_t>>& predicted,
               const std::vector<std::vector<std::uint8_t>>& truth) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw std::invalid_argument("fg_miou: need equally many non-zero masks");
  }
  double total = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].size() != truth[i].size()) {
      throw std::invalid_argument("fg_miou: token geometry mismatch");
    }
    int inter = 0, uni = 0;
    for (std::size_t t = 0; t < truth[i].size(); ++t) {
      const bool a = predicted[i][t] != 0;
      const bool b = truth[i][t] != 0;
      inter += a && b;
      uni += a || b;
    }
    total += uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
  }
  return total / static_cast<double>(predicted.size());
}

double kp_regression(const std::vector<std::vector<double>>& val_centroids,
                     const std::vector<std::vector<double>>& val_keypoints,
                     const std::vector<std::vector<double>>& test_centroids,
                     const std::vector<std::vector<double>>& test_keypoints, double diagonal) {
  if (val_centroids.empty() || val_centroids.size() != val_keypoints.size() ||
      test_centroids.size() != test_keypoints.size() || test_centroids.empty()) {
    throw std::invalid_argument("kp_regression: mismatched or empty inputs");
  }
  const int f = static_cast<int>(val_centroids[0].size());
  const int o = static_cast<int>(val_keypoints[0].size());
  if (o % 2 != 0) throw std::invalid_argument("kp_regression: keypoints must be (x, y) pairs");
  if (static_cast<int>(val_centroids.size()) < f / 2 + 1) {
    throw std::invalid_argument("kp_regression: need at least K+1 validation images");
  }
  const int n = static_cast<int>(val_centroids.size());
  Eigen::MatrixXd x(n, f + 1);
  Eigen::MatrixXd y(n, o);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < f; ++j) x(i, j) = val_centroids[i].at(j);
    x(i, f) = 1.0;
    for (int j = 0; j < o; ++j) y(i, j) = val_keypoints[i].at(j);
  }
  Eigen::MatrixXd gram = x.transpose() * x;
  Eigen::MatrixXd rhs = x.transpose() * y;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
  Eigen::MatrixXd w;
  if (lu.rank() == gram.rows()) {
    w = Eigen::LDLT<Eigen::MatrixXd>(gram).solve(rhs);
  } else {
    gram.diagonal().array() += 1e-6;
    w = Eigen::LDLT<Eigen::MatrixXd>(gram).solve(rhs);
  }

  double err = 0;
  int count = 0;
  for (std::size_t i = 0; i < test_centroids.size(); ++i) {
    Eigen::RowVectorXd row(f + 1);
    for (int j = 0; j < f; ++j) row(j) = test_centroids[i].at(j);
    row(f) = 1.0;
    Eigen::RowVectorXd pred = row * w;
    for (int k = 0; k < o; k += 2) {
      const double dx = pred(k) - test_keypoints[i].at(k);
      const double dy = pred(k + 1) - test_keypoints[i].at(k + 1);
      err += std::sqrt(dx * dx + dy * dy);
      ++count;
    }
  }
  return err / count / diagonal;
}

FlopsBreakdown flops_estimate(const ModelConfig& c, int n_live_tokens) {
  if (n_live_tokens < 0) throw std::invalid_argument("flops_estimate: negative token count");
  const double t = n_live_tokens + 1.0 + c.n_registers;
  const double d = c.embed_dim;
  const double layers = c.n_layers;
  FlopsBreakdown f;
  f.embedding = n_live_tokens * static_cast<double>(c.patch_dim()) * d;
  f.projections = layers * 4.0 * t * d * d;
  f.attention_scores = layers * 2.0 * t * t * d;
  f.mlp = layers * 2.0 * t * d * (d * c.mlp_ratio);
  f.head = d * c.n_classes;
  return f;
}

ModelConfig vit_b_config() {
  ModelConfig c;
  c.image_size = 224;
  c.patch_size = 16;
  c.embed_dim = 768;
  c.n_heads = 12;
  c.n_layers = 12;
  c.mlp_ratio = 4;
  c.n_registers = 0;
  c.n_classes = 1000;
  c.n_parts = 1;
  return c;
}

}  // namespace ifam
