// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ifam/image.hpp"
#include "ifam/vit.hpp"

namespace ifam {

/// Synthetic spurious-correlation benchmark. Foreground shape type is the
/// label; the background texture agrees with the label with probability
/// `correlation` on train and test-iid.
struct DatasetSpec {
  int n_classes = 4;
  int n_backgrounds = 2;
  double correlation = 0.95;
  int n_train = 1000;
  int n_val = 200;
  int n_test = 400;
  int image_size = 32;
  int patch_size = 8;  // geometry of the token-level GT masks
  std::uint64_t seed = 0;
  double min_area = 0.15;  // shape area as a fraction of the image
  double max_area = 0.35;
  int margin = 0;  // pixels kept free of foreground on every side
  // Renders each shape as whole patches (its majority-vote token mask), so
  // no patch mixes foreground and background pixels.
  bool snap_to_grid = false;
  // Plain background plus a class-correlated colored blob; `background`
  // then indexes the blob color.
  bool planted_blob = false;
  int blob_size = 6;

  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

struct Keypoint {
  double x = 0;
  double y = 0;
  bool operator==(const Keypoint&) const = default;
};

struct GroupedSample {
  std::string id;
  Image image;
  int label = 0;
  int background = 0;
  int group = -1;  // label * n_backgrounds + background
  std::vector<std::uint8_t> pixel_mask;
  std::vector<std::uint8_t> token_mask;
  std::vector<std::uint8_t> spurious_tokens;  // planted blob tokens, else empty
  std::vector<Keypoint> keypoints;            // shape centroid, topmost point
};

struct Split {
  std::string name;
  std::vector<GroupedSample> samples;
};

inline constexpr const char* kSplitNames[] = {"train", "val", "test-iid", "test-mixed-same",
                                              "test-mixed-rand"};

struct GroupedDataset {
  DatasetSpec spec;
  std::map<std::string, Split> splits;

  const Split& split(const std::string& name) const;
  int n_groups() const { return spec.n_classes * spec.n_backgrounds; }
};

/// Shape name of a class label ("square", "disc", "triangle", "plus"),
/// repeating every four classes.
std::string class_name(int label);

/// Background paired with a class on the majority groups.
int paired_background(int label, int n_backgrounds);

GroupedDataset generate(const DatasetSpec& spec);

/// Majority vote of a pixel mask over patch cells (strictly more than half).
std::vector<std::uint8_t> token_mask_from_pixels(const std::vector<std::uint8_t>& pixels,
                                                 int image_size, int patch_size);

struct MetricsReport {
  int n = 0;
  double aa = 0;
  double wga = 0;
  std::map<int, double> group_accuracy;
  std::map<int, int> group_counts;
  std::optional<double> bg_gap;
  std::optional<double> fg_miou;
  std::optional<double> kp_error;
};

MetricsReport report_from_predictions(const std::vector<int>& predicted,
                                      const std::vector<GroupedSample>& samples);

using Classifier = std::function<int(const GroupedSample&)>;

/// Accuracy metrics on `split`; BG-GAP = acc(mixed_same) - acc(mixed_rand)
/// when both are supplied.
MetricsReport evaluate(const Classifier& classify, const Split& split,
                       const Split* mixed_same = nullptr, const Split* mixed_rand = nullptr);

double bg_gap(double mixed_same_accuracy, double mixed_rand_accuracy);

/// Mean per-image IoU of foreground tokens. An image whose union is empty
/// scores 1 when both masks are empty.
double fg_miou(const std::vector<std::vector<std::uint8_t>>& predicted,
               const std::vector<std::vector<std::uint8_t>>& truth);

/// Least-squares linear map (with bias) from part centroids to keypoints,
/// fitted on validation and scored on test as the mean L2 error divided by
/// `diagonal`. Falls back to ridge (1e-6) when the design is rank-deficient.
/// Each row: centroids as [x0, y0, x1, y1, ...]; keypoints likewise.
double kp_regression(const std::vector<std::vector<double>>& val_centroids,
                     const std::vector<std::vector<double>>& val_keypoints,
                     const std::vector<std::vector<double>>& test_centroids,
                     const std::vector<std::vector<double>>& test_keypoints, double diagonal);

struct FlopsBreakdown {
  double embedding = 0;
  double projections = 0;       // qkv + output, all layers
  double attention_scores = 0;  // QK^T and AV, all layers
  double mlp = 0;
  double head = 0;
  double total() const { return embedding + projections + attention_scores + mlp + head; }
  double gflops() const { return total() * 1e-9; }
};

/// Analytic cost of one forward pass over n_live patches plus the class and
/// register tokens. One multiply-accumulate counts as one FLOP.
FlopsBreakdown flops_estimate(const ModelConfig& config, int n_live_tokens);

ModelConfig vit_b_config();

// On-disk layout: <dir>/<split>/{manifest.json, images/*.png, masks/*.png}.
void save_dataset(const GroupedDataset& dataset, const std::string& dir);
GroupedDataset load_dataset(const std::string& dir);

}  // namespace ifam
