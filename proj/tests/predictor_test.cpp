// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "ifam/model.hpp"
#include "ifam/numcore/ops.hpp"
#include "ifam/predictor.hpp"
#include "support/fixtures.hpp"

using namespace ifam;
using ifam::testing::perturb_masked;
using ifam::testing::random_image;
using ifam::testing::random_mask;
using ifam::testing::tiny_config;

namespace {

double max_abs_diff(const nc::Tensor& a, const nc::Tensor& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("stage 2: logits ignore every pixel outside the mask") {
  IfamModel m = IfamModel::create(tiny_config(), InferencePath::hard, 11);
  Predictor pred = m.predictor();
  nc::Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    Image img = random_image(m.config, rng);
    auto s = random_mask(m.config.num_patches(), rng, 0.3);
    Image other = perturb_masked(img, s, m.config.patch_size, rng);
    CHECK(max_abs_diff(pred.stage2_forward(img, s), pred.stage2_forward(other, s)) == 0.0);
  }
}

TEST_CASE("stage 2: straight-through and plain masks give identical logits") {
  IfamModel m = IfamModel::create(tiny_config(), InferencePath::hard, 12);
  Selector sel = m.selector();
  Predictor pred = m.predictor();
  nc::Rng rng(2);
  Image img = random_image(m.config, rng);
  SelectorOutput out = sel.run(img, false, nullptr);
  HardTokenMask mask = discretize(out.assignment, all_parts(m.config.n_parts));
  CHECK(max_abs_diff(pred.stage2_forward(img, mask), pred.stage2_forward(img, mask.s)) == 0.0);
}

TEST_CASE("stage 2: the classification loss reaches the selector") {
  IfamModel m = IfamModel::create(tiny_config(), InferencePath::hard, 13);
  nc::Rng rng(3);
  Image img = random_image(m.config, rng);
  SelectorOutput out = m.selector().run(img, false, nullptr);
  HardTokenMask mask = discretize(out.assignment, all_parts(m.config.n_parts));
  nc::backward(nc::cross_entropy(m.predictor().stage2_forward(img, mask), {1}));
  double norm = 0;
  for (double g : m.params.get("stage1.prototypes").grad()) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("soft masking leaks the background") {
  IfamModel m = IfamModel::create(tiny_config(), InferencePath::soft, 14);
  Predictor pred = m.predictor();
  nc::Rng rng(4);
  int leaky = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    Image img = random_image(m.config, rng);
    auto s = random_mask(m.config.num_patches(), rng);
    std::vector<double> p(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) p[i] = s[i] ? 0.9 : 0.1;
    nc::Tensor p_fg = nc::Tensor::from({static_cast<int>(p.size())}, p);
    Image other = perturb_masked(img, s, m.config.patch_size, rng);
    if (max_abs_diff(pred.soft_forward(img, p_fg), pred.soft_forward(other, p_fg)) > 1e-3) ++leaky;
  }
  CHECK(leaky >= trials / 2);
}

TEST_CASE("masked, compacted and padded forwards agree") {
  ModelConfig c = tiny_config();
  IfamModel m = IfamModel::create(c, InferencePath::hard, 15);
  Predictor pred = m.predictor();
  nc::Rng rng(5);
  std::vector<Image> images;
  std::vector<std::vector<std::uint8_t>> masks;
  for (int i = 0; i < 6; ++i) {
    images.push_back(random_image(c, rng));
    masks.push_back(random_mask(c.num_patches(), rng, 0.2 + 0.1 * i));
  }
  auto padded = pred.padded_forward(images, masks);
  REQUIRE(padded.size() == images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    nc::Tensor masked = pred.stage2_forward(images[i], masks[i]);
    CHECK(max_abs_diff(masked, pred.compacted_forward(images[i], masks[i])) < 1e-6);
    CHECK(max_abs_diff(masked, padded[i]) < 1e-6);
  }
}

TEST_CASE("compact_tokens and pad_batch") {
  ModelConfig c = tiny_config();
  IfamModel m = IfamModel::create(c, InferencePath::hard, 16);
  nc::Rng rng(6);
  TokenGrid g = m.predictor().vit().embed(random_image(c, rng));
  std::vector<std::uint8_t> s(16, 0);
  s[2] = s[7] = s[9] = 1;
  TokenGrid k = compact_tokens(g, s);
  CHECK(k.patches.dim(0) == 3);
  CHECK(k.patch_ids == std::vector<int>{2, 7, 9});
  for (int j = 0; j < c.embed_dim; ++j) CHECK(k.patches.at(1, j) == g.patches.at(7, j));

  std::vector<std::uint8_t> one(16, 0);
  one[0] = 1;
  PaddedBatch b = pad_batch({k, compact_tokens(g, one)});
  CHECK(b.k_max == 3);
  CHECK(b.sequences[1].dim(0) == 3 + 1 + c.n_registers);
  CHECK(b.valid[1] == std::vector<std::uint8_t>{1, 0, 0});
  CHECK(b.masks[1].blocked(3, 1));
  CHECK_THROWS_AS(compact_tokens(g, std::vector<std::uint8_t>(15, 1)), std::invalid_argument);
}

TEST_CASE("part_dropout") {
  nc::Rng rng(7);
  const std::set<int> all = {1, 2, 3, 4};
  CHECK(part_dropout(all, 0.0, rng, true) == all);
  CHECK(part_dropout(all, 0.9, rng, false) == all);
  for (int t = 0; t < 200; ++t) {
    auto kept = part_dropout(all, 0.5, rng, true);
    CHECK_FALSE(kept.empty());
    for (int k : kept) CHECK(all.count(k) == 1);
    auto single = part_dropout(all, 1.0, rng, true);
    CHECK(single.size() == 1u);
  }
}

TEST_CASE("dense forward depends on every patch") {
  IfamModel m = IfamModel::create(tiny_config(), InferencePath::dense, 17);
  nc::Rng rng(8);
  Image img = random_image(m.config, rng);
  std::vector<std::uint8_t> s(16, 1);
  s[5] = 0;
  Image other = perturb_masked(img, s, m.config.patch_size, rng);
  Predictor pred = m.predictor();
  CHECK(max_abs_diff(pred.dense_forward(img), pred.dense_forward(other)) > 1e-9);
  CHECK_FALSE(m.has_selector());
}
