// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: trains the desk-scale models and prints one PASS/FAIL
// line per criterion. Progress goes to stderr; the exit code is the number
// of failed criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ifam/checkpoint.hpp"
#include "ifam/cli.hpp"
#include "ifam/interventions.hpp"
#include "ifam/json_io.hpp"
#include "ifam/numcore/gradcheck.hpp"
#include "ifam/numcore/ops.hpp"
#include "ifam/trainer.hpp"
#include "support/fixtures.hpp"
#include "support/op_cases.hpp"

using namespace ifam;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kSeeds[] = {1, 2, 3};

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failed = 0;

void report(const std::string& name, const Outcome& o) {
  std::printf("%s  %-28s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++g_failed;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string fmt_e(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

// ||a - b||_inf / ||a||_inf
double relative_change(const nc::Tensor& a, const nc::Tensor& b) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(a[i]));
  }
  return diff / std::max(scale, std::numeric_limits<double>::min());
}

double max_abs_diff(const nc::Tensor& a, const nc::Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Desk-scale experiments

struct Desk {
  DatasetSpec data;
  RunConfig run;
};

Desk load_desk(const std::string& prefix, int seed) {
  const std::string dir = IFAM_DESK_CONFIG_DIR;
  Desk d{load_config<DatasetSpec>(dir + "/" + prefix + "data.json"),
         load_config<RunConfig>(dir + "/" + prefix + "run.json")};
  d.data.seed = static_cast<std::uint64_t>(seed);
  d.run.train.seed = static_cast<std::uint64_t>(seed);
  return d;
}

IfamModel train(const Desk& desk, const GroupedDataset& data, const std::string& tag,
                const std::function<void(TrainConfig&)>& variant = {}) {
  TrainConfig tc = desk.run.train;
  if (variant) variant(tc);
  const auto t0 = Clock::now();
  FitResult r = fit(data, desk.run.model, tc);
  spdlog::info("trained {} (seed {}) in {:.1f}s, best epoch {}", tag, tc.seed, seconds_since(t0),
               r.best_epoch);
  return std::move(r.model);
}

struct SeedRun {
  int seed = 0;
  GroupedDataset data;
  IfamModel ifam;
  MetricsReport ifam_mr, ifam_mr_q99, ifam_iid, ifam_iid_q99;
  double late_mr_wga = 0;
  double dense_gap = 0;
  InterventionPlan q99;
};

SeedRun run_seed(int seed) {
  const Desk desk = load_desk("", seed);
  GroupedDataset data = generate(desk.data);
  IfamModel model = train(desk, data, "iFAM");
  SeedRun r{seed, std::move(data), std::move(model), {}, {}, {}, {}, 0, 0, {}};
  const GroupedDataset& data_ref = r.data;
  r.ifam_mr = evaluate_split(r.ifam, data_ref, "test-mixed-rand", {});
  r.ifam_iid = evaluate_split(r.ifam, data_ref, "test-iid", {});
  r.q99.table = calibrate_thresholds(r.ifam, data_ref.split("train"), 99);
  r.ifam_mr_q99 = evaluate_split(r.ifam, data_ref, "test-mixed-rand", r.q99);
  r.ifam_iid_q99 = evaluate_split(r.ifam, data_ref, "test-iid", r.q99);

  IfamModel late = train(desk, data_ref, "late-mask", [](TrainConfig& c) {
    c.ablation.no_second_stage = true;
  });
  r.late_mr_wga = evaluate_split(late, data_ref, "test-mixed-rand", {}).wga;
  IfamModel dense = train(desk, data_ref, "dense", [](TrainConfig& c) { c.dense_baseline = true; });
  r.dense_gap = evaluate_split(dense, data_ref, "test-mixed-rand", {}).bg_gap.value();
  spdlog::info("seed {}: iFAM MR wga {:.3f} (q99 {:.3f}) gap {:.3f} | late wga {:.3f} | dense gap {:.3f}",
               seed, r.ifam_mr.wga, r.ifam_mr_q99.wga, r.ifam_mr.bg_gap.value(), r.late_mr_wga,
               r.dense_gap);
  return r;
}

// ---------------------------------------------------------------------------
// Criteria

Outcome faithfulness(const IfamModel& model, const Split& test) {
  const auto t0 = Clock::now();
  nc::NoGradScope no_grad;
  const Predictor pred = model.predictor();
  const int n = model.config.num_patches();
  const int ps = model.config.patch_size;
  nc::Rng rng(2024);
  double worst = 0;
  int trials = 0;
  for (int t = 0; t < 1000; ++t, ++trials) {
    const Image& img = test.samples[t % test.samples.size()].image;
    std::vector<std::uint8_t> s;
    if (t % 2 == 0) {
      s = run_pipeline(model, img, {}).mask->s;
    } else {
      s = ifam::testing::random_mask(n, rng, rng.uniform(0.05, 0.6));
    }
    const Image other = ifam::testing::perturb_masked(img, s, ps, rng);
    worst = std::max(worst, relative_change(pred.stage2_forward(img, s), pred.stage2_forward(other, s)));
  }
  // Exhaustive: every subset of N candidate tokens, N = 1..6.
  int exhaustive = 0;
  for (int big_n = 1; big_n <= 6; ++big_n) {
    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids);
    ids.resize(static_cast<std::size_t>(big_n));
    const Image& img = test.samples[big_n].image;
    for (int bits = 0; bits < (1 << big_n); ++bits, ++exhaustive) {
      std::vector<std::uint8_t> s(static_cast<std::size_t>(n), 0);
      for (int j = 0; j < big_n; ++j)
        if (bits >> j & 1) s[ids[j]] = 1;
      const Image other = ifam::testing::perturb_masked(img, s, ps, rng);
      worst = std::max(worst,
                       relative_change(pred.stage2_forward(img, s), pred.stage2_forward(other, s)));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-9 && secs < 60.0,
          std::to_string(trials) + " random + " + std::to_string(exhaustive) +
              " exhaustive masks, max rel change " + fmt_e(worst) + " (< 1e-9), " + fmt3(secs) +
              "s"};
}

Outcome soft_negative_control(const IfamModel& soft, const Split& test) {
  nc::NoGradScope no_grad;
  const Selector sel = soft.selector();
  const Predictor pred = soft.predictor();
  const int ps = soft.config.patch_size;
  nc::Rng rng(77);
  int leaky = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const Image& img = test.samples[t % test.samples.size()].image;
    const HardTokenMask m =
        discretize(sel.run(img, false, nullptr).assignment, all_parts(soft.config.n_parts));
    const Image other = ifam::testing::perturb_masked(img, m.s, ps, rng);
    if (relative_change(pred.soft_forward(img, m.p_fg), pred.soft_forward(other, m.p_fg)) > 1e-3)
      ++leaky;
  }
  return {2 * leaky >= trials, "soft path: " + std::to_string(leaky) + "/" +
                                   std::to_string(trials) + " trials change > 1e-3 (need >= 50%)"};
}

Outcome path_equivalence(const IfamModel& model, const Split& test) {
  nc::NoGradScope no_grad;
  const Predictor pred = model.predictor();
  nc::Rng rng(5);
  double worst = 0;
  int instances = 0;
  for (int batch = 0; batch < 10; ++batch) {
    std::vector<Image> images;
    std::vector<std::vector<std::uint8_t>> masks;
    for (int i = 0; i < 10; ++i) {
      images.push_back(test.samples[rng.uniform_int(static_cast<int>(test.samples.size()))].image);
      masks.push_back(
          ifam::testing::random_mask(model.config.num_patches(), rng, rng.uniform(0.05, 0.9)));
    }
    const auto padded = pred.padded_forward(images, masks);
    for (std::size_t i = 0; i < images.size(); ++i, ++instances) {
      const nc::Tensor masked = pred.stage2_forward(images[i], masks[i]);
      worst = std::max(worst, max_abs_diff(masked, pred.compacted_forward(images[i], masks[i])));
      worst = std::max(worst, max_abs_diff(masked, padded[i]));
    }
  }
  return {worst < 1e-6, std::to_string(instances) + " instances, max |diff| " + fmt_e(worst) +
                            " (< 1e-6)"};
}

Outcome gradient_correctness() {
  double worst = 0;
  std::string worst_op;
  int ops = 0;
  for (const auto& c : ifam::testing::differentiable_op_cases()) {
    ++ops;
    nc::Rng rng(1234);
    for (int trial = 0; trial < 20; ++trial) {
      const nc::Tensor x = ifam::testing::random_tensor(c.input_shape, rng, c.lo, c.hi);
      const std::uint64_t seed = 100 + static_cast<std::uint64_t>(trial);
      const double err = nc::finite_diff_check([&](const nc::Tensor& t) { return c.f(t, seed); }, x);
      if (err > worst) {
        worst = err;
        worst_op = c.name;
      }
    }
  }
  return {worst < 1e-5, std::to_string(ops) + " ops x 20 inputs, worst " + fmt_e(worst) + " (" +
                            worst_op + ", < 1e-5)"};
}

Outcome flops_anchors() {
  const ModelConfig b = vit_b_config();
  // Token counts include the class token.
  const double full = flops_estimate(b, 197 - 1).gflops();
  const double live = flops_estimate(b, 60 - 1).gflops();
  const double total = full + live;
  const bool ok = std::abs(full - 17.5) / 17.5 <= 0.05 && std::abs(live - 5.3) / 5.3 <= 0.10 &&
                  std::abs(total - 22.8) / 22.8 <= 0.10;
  return {ok, "197 tokens " + fmt3(full) + " GF (17.5 +-5%), 60 live " + fmt3(live) +
                  " GF (5.3 +-10%), two-stage " + fmt3(total) + " GF (22.8 +-10%)"};
}

// Largest gap between the removed fraction and its bound over all parts.
double calibration_slack(const IfamModel& model, const Split& train, double q) {
  nc::NoGradScope no_grad;
  const ThresholdTable table = calibrate_thresholds(model, train, q);
  const Selector sel = model.selector();
  const int k = model.config.n_parts;
  std::vector<int> removed(static_cast<std::size_t>(k), 0), seen(static_cast<std::size_t>(k), 0);
  for (const auto& x : train.samples) {
    SelectorOutput out = sel.run(x.image, false, nullptr);
    const std::vector<int> before = out.assignment.hard;
    for (int h : before)
      if (h > 0) ++seen[h - 1];
    for (int i : remove_tokens(out.assignment, out.vit.patches, sel.prototypes(), table))
      ++removed[before[i] - 1];
  }
  double worst = -1;
  for (int p = 0; p < k; ++p) {
    if (seen[p] != table.counts[p]) return std::numeric_limits<double>::infinity();
    if (seen[p] == 0) continue;
    const double frac = static_cast<double>(removed[p]) / seen[p];
    const double bound = (100.0 - q) / 100.0 + 1.0 / seen[p];
    worst = std::max(worst, frac - bound);
  }
  return worst;
}

Outcome calibration(const std::vector<const IfamModel*>& models,
                    const std::vector<const Split*>& trains) {
  double worst = -1;
  for (std::size_t m = 0; m < models.size(); ++m)
    for (double q : {97.0, 99.0, 100.0})
      worst = std::max(worst, calibration_slack(*models[m], *trains[m], q));

  nc::Rng rng(99);
  int mismatches = 0;
  for (int t = 0; t < 10000; ++t) {
    const int n = 1 + rng.uniform_int(60);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.bernoulli(0.2) ? std::round(rng.uniform(0, 4)) : rng.uniform(0, 2);
    const double q = t % 3 == 0 ? std::vector<double>{97, 99, 100}[t % 9 / 3] : rng.uniform(1e-3, 100);
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const int rank = std::max(1, static_cast<int>(std::ceil(q / 100.0 * n - 1e-9)));
    if (nearest_rank_percentile(v, q) != sorted[static_cast<std::size_t>(rank - 1)]) ++mismatches;
  }
  return {worst <= 0 && mismatches == 0,
          std::to_string(models.size()) + " models x q{97,99,100}: max(removed - bound) " +
              fmt_e(worst) + " (<= 0); percentile vs sort oracle: " + std::to_string(mismatches) +
              "/10000 mismatches"};
}

Outcome robustness(const std::vector<SeedRun>& runs) {
  bool ok = true;
  std::ostringstream d;
  for (const auto& r : runs) {
    const bool a = r.ifam_mr.wga > r.late_mr_wga;
    const bool b = r.ifam_mr.bg_gap.value() < r.dense_gap;
    const bool c = r.ifam_mr_q99.wga >= r.ifam_mr.wga;
    ok = ok && a && b && c;
    d << "s" << r.seed << ": wga " << fmt3(r.ifam_mr.wga) << (a ? ">" : "!>") << "late "
      << fmt3(r.late_mr_wga) << ", gap " << fmt3(r.ifam_mr.bg_gap.value()) << (b ? "<" : "!<")
      << "dense " << fmt3(r.dense_gap) << ", q99 wga " << fmt3(r.ifam_mr_q99.wga)
      << (c ? "" : " DROP") << "; ";
  }
  return {ok, d.str()};
}

Outcome fg_miou_sanity(const std::vector<SeedRun>& runs) {
  bool ok = true;
  std::ostringstream d;
  for (const auto& r : runs) {
    const double base = r.ifam_iid.fg_miou.value();
    const double q99 = r.ifam_iid_q99.fg_miou.value();
    ok = ok && base >= 0.5 && q99 >= base - 0.05;
    d << "s" << r.seed << ": " << fmt3(base) << " -> q99 " << fmt3(q99) << "; ";
  }
  return {ok, d.str() + "(>= 0.5, drop <= 0.05)"};
}

Outcome planted_loo(std::vector<IfamModel>& models, std::vector<GroupedDataset>& datasets) {
  int hits = 0;
  std::ostringstream d;
  for (int seed : kSeeds) {
    const Desk desk = load_desk("planted_", seed);
    GroupedDataset data = generate(desk.data);
    IfamModel model = train(desk, data, "planted", {});
    const int planted = model.config.n_parts;  // the planted loss binds the last part
    const LooResult loo = loo_part_removal(model, data.split("val"), MetricKind::wga);
    const double before = evaluate_split(model, data, "test-mixed-rand", {}).wga;
    const double after = evaluate_split(model, data, "test-mixed-rand", loo.plan).wga;
    const bool exact = loo.plan.dropped_parts == std::set<int>{planted};
    const bool hit = exact && after >= before;
    hits += hit;
    d << "s" << seed << ": drop {";
    for (int p : loo.plan.dropped_parts) d << p;
    d << "} wga " << fmt3(before) << "->" << fmt3(after) << (hit ? "" : " miss") << "; ";
    models.push_back(std::move(model));
    datasets.push_back(std::move(data));
  }
  return {hits >= 2, d.str() + std::to_string(hits) + "/3 (need >= 2)"};
}

Outcome round_trips(const SeedRun& r) {
  const fs::path dir = fs::temp_directory_path() / "ifam_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::string> problems;

  const std::string ckpt = (dir / "model.ifam").string();
  save_checkpoint(r.ifam, ckpt);
  const IfamModel back = load_checkpoint(ckpt);
  if (serialize_checkpoint(back) != serialize_checkpoint(r.ifam)) problems.push_back("ckpt bytes");
  auto it = back.params.begin();
  for (const auto& [name, t] : r.ifam.params) {
    if (it->first != name || it->second.values().size() != t.values().size() ||
        !std::equal(t.values().begin(), t.values().end(), it->second.values().begin())) {
      problems.push_back("param " + name);
      break;
    }
    ++it;
  }

  InterventionPlan plan = r.q99;
  plan.dropped_parts.clear();
  const Json pj = plan;
  const InterventionPlan plan_back = Json::parse(pj.dump()).get<InterventionPlan>();
  if (Json(plan_back).dump() != pj.dump()) problems.push_back("plan json");
  if (plan_back.table->tau != plan.table->tau) problems.push_back("plan tau");
  const auto& test = r.data.split("test-mixed-rand");
  {
    nc::NoGradScope no_grad;
    for (int i = 0; i < 20; ++i) {
      const Image& img = test.samples[i].image;
      if (max_abs_diff(apply_plan(r.ifam, img, plan), apply_plan(back, img, plan_back)) != 0.0) {
        problems.push_back("logits after reload");
        break;
      }
    }
  }

  const std::string data_dir = (dir / "data").string();
  save_dataset(r.data, data_dir);
  const std::string plan_path = (dir / "plan.json").string();
  write_json_file(plan_path, pj);
  std::string outputs[2];
  for (auto& out : outputs) {
    std::ostringstream o, e;
    const int code = cli::run({"eval", "--checkpoint", ckpt, "--data", data_dir, "--split",
                               "test-mixed-rand", "--plan", plan_path, "--seed", "1"},
                              o, e);
    if (code != cli::kOk) problems.push_back("cli exit " + std::to_string(code) + ": " + e.str());
    out = o.str();
  }
  if (outputs[0] != outputs[1] || outputs[0].empty()) problems.push_back("cli eval differs");
  const MetricsReport cli_report = Json::parse(outputs[0]).get<MetricsReport>();
  if (cli_report.wga != r.ifam_mr_q99.wga || cli_report.aa != r.ifam_mr_q99.aa)
    problems.push_back("cli metrics differ from in-process");
  fs::remove_all(dir);

  std::string detail = "checkpoint bytes+params, plan JSON, reloaded logits, CLI eval x2";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  spdlog::set_default_logger(spdlog::stderr_color_mt("acceptance"));
  spdlog::set_level(spdlog::level::info);
  spdlog::set_pattern("[%T] %v");
  const auto t0 = Clock::now();

  // Training-free criteria first.
  const Outcome grad = gradient_correctness();
  const Outcome flops = flops_anchors();

  std::vector<SeedRun> runs;
  for (int seed : kSeeds) runs.push_back(run_seed(seed));
  const SeedRun& first = runs.front();
  const Split& test = first.data.split("test-iid");

  const Desk desk = load_desk("", first.seed);
  IfamModel soft = train(desk, first.data, "soft_masks", [](TrainConfig& c) {
    c.ablation.soft_masks = true;
  });

  std::vector<IfamModel> planted;
  std::vector<GroupedDataset> planted_data;
  const Outcome loo = planted_loo(planted, planted_data);

  std::vector<const IfamModel*> models;
  std::vector<const Split*> trains;
  for (const auto& r : runs) {
    models.push_back(&r.ifam);
    trains.push_back(&r.data.split("train"));
  }
  for (std::size_t i = 0; i < planted.size(); ++i) {
    models.push_back(&planted[i]);
    trains.push_back(&planted_data[i].split("train"));
  }

  report("faithfulness", faithfulness(first.ifam, test));
  report("soft-mask negative control", soft_negative_control(soft, test));
  report("path equivalence", path_equivalence(first.ifam, test));
  report("gradient correctness", grad);
  report("flops anchors", flops);
  report("calibration exactness", calibration(models, trains));
  report("robustness direction", robustness(runs));
  report("planted-bias LOO", loo);
  report("fg mIoU sanity", fg_miou_sanity(runs));
  report("round-trips and CLI eval", round_trips(first));
  spdlog::info("acceptance finished in {:.0f}s, {} failed", seconds_since(t0), g_failed);
  return g_failed;
}
