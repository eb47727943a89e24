// SPDX-License-Identifier: Apache-2.0
#include "ifam/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "ifam/checkpoint.hpp"
#include "ifam/databench.hpp"
#include "ifam/interventions.hpp"
#include "ifam/json_io.hpp"
#include "ifam/png_io.hpp"
#include "ifam/service.hpp"
#include "ifam/trainer.hpp"

namespace ifam::cli {

namespace fs = std::filesystem;

namespace {

// Missing inputs are I/O failures, not generic runtime errors.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A flag value the command cannot use, such as an unknown split name.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_path(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path);
}

template <typename T>
T open_config(const std::string& path) {
  require_path(path, "config");
  return load_config<T>(path);
}

GroupedDataset open_dataset(const std::string& dir) {
  require_path(dir, "dataset directory");
  require_path((fs::path(dir) / "dataset.json").string(), "dataset index");
  return load_dataset(dir);
}

IfamModel open_checkpoint(const std::string& path) {
  require_path(path, "checkpoint");
  return load_checkpoint(path);
}

const Split& find_split(const GroupedDataset& ds, const std::string& name) {
  auto it = ds.splits.find(name);
  if (it == ds.splits.end()) throw UsageError("dataset has no split '" + name + "'");
  return it->second;
}

InterventionPlan open_plan(const std::string& path, const IfamModel& model) {
  require_path(path, "plan");
  InterventionPlan plan = load_config<InterventionPlan>(path);
  try {
    plan.validate(model.config.n_parts);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return plan;
}

MetricsReport evaluate_split_checked(const IfamModel& model, const GroupedDataset& ds,
                                     const std::string& split, const InterventionPlan& plan) {
  find_split(ds, split);
  return evaluate_split(model, ds, split, plan);
}

void emit(std::ostream& out, const Json& j, const std::string& path) {
  if (!path.empty()) write_json_file(path, j);
  out << j.dump(2) << "\n";
}

// Part index map at pixel resolution (nearest-neighbour upsampling).
std::vector<std::uint8_t> pixel_part_map(const std::vector<int>& hard, const ModelConfig& c) {
  const int s = c.image_size, g = c.grid(), ps = c.patch_size;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(s) * s);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      out[y * s + x] = static_cast<std::uint8_t>(hard[(y / ps) * g + x / ps]);
  return out;
}

}  // namespace

void configure_logging() {
  auto logger = spdlog::stderr_logger_mt("ifam");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("IFAM_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"iFAM: two-stage faithful masking on a synthetic benchmark", "ifam"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, data_dir, split = "test-mixed-rand", out_path,
                                                      plan_path, metric = "wga", preset, log_path,
                                                      static_dir, plans_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> q;
  std::optional<int> tokens, live;
  bool loo = false, repeated = false;
  int port = 8173;

  auto* gen = app.add_subcommand("gen", "generate a dataset from a DatasetSpec JSON");
  gen->add_option("--config", config_path, "DatasetSpec JSON")->required();
  gen->add_option("--out", out_path, "output directory")->required();
  gen->add_option("--seed", seed, "overrides the spec seed");

  auto* train = app.add_subcommand("train", "train from a {model, train} config");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_path, "checkpoint path")->required();
  train->add_option("--log", log_path, "JSON-lines epoch log (default: <out>.log.jsonl)");
  train->add_option("--seed", seed, "overrides the training seed");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  eval->add_option("--checkpoint", checkpoint_path)->required();
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--split", split, "split name")->capture_default_str();
  eval->add_option("--plan", plan_path, "intervention plan JSON");
  eval->add_option("--out", out_path, "also write the report here");
  eval->add_option("--seed", seed, "accepted for uniformity; evaluation draws no noise");

  auto* intervene = app.add_subcommand("intervene", "calibrate token removal and/or run LOO");
  intervene->add_option("--checkpoint", checkpoint_path)->required();
  intervene->add_option("--data", data_dir)->required();
  intervene->add_option("--split", split, "split scored by LOO and the report")
      ->default_val("val");
  intervene->add_option("--q", q, "token-removal percentile in (0, 100]");
  intervene->add_flag("--loo", loo, "leave-one-out part removal");
  intervene->add_flag("--repeated", repeated, "keep dropping parts while the metric improves");
  intervene->add_option("--metric", metric, "LOO metric")
      ->check(CLI::IsMember({"wga", "aa"}))
      ->capture_default_str();
  intervene->add_option("--out", out_path, "plan output path");
  intervene->add_option("--seed", seed, "accepted for uniformity");

  auto* masks = app.add_subcommand("export-masks", "write indexed-PNG part maps");
  masks->add_option("--checkpoint", checkpoint_path)->required();
  masks->add_option("--data", data_dir)->required();
  masks->add_option("--split", split)->capture_default_str();
  masks->add_option("--plan", plan_path);
  masks->add_option("--out", out_path, "output directory")->required();

  auto* flops = app.add_subcommand("flops", "analytic forward cost");
  auto* preset_opt = flops->add_option("--preset", preset)->check(CLI::IsMember({"vitb"}));
  flops->add_option("--config", config_path, "model config JSON")->excludes(preset_opt);
  flops->add_option("--tokens", tokens, "sequence length incl. class and register tokens (default: all)");
  flops->add_option("--live", live,
                    "stage-2 sequence length incl. class and register tokens; adds a two-stage total");

  auto* serve = app.add_subcommand("serve", "HTTP service for the intervention console");
  serve->add_option("--checkpoint", checkpoint_path)->required();
  serve->add_option("--data", data_dir)->required();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--plans", plans_dir, "named-plan store directory");
  serve->add_option("--static", static_dir, "console bundle to serve at /");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "ifam: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (gen->parsed()) {
      auto spec = open_config<DatasetSpec>(config_path);
      if (seed) spec.seed = *seed;
      const GroupedDataset ds = generate(spec);
      save_dataset(ds, out_path);
      Json counts = Json::object();
      for (const auto& [name, s] : ds.splits) counts[name] = s.samples.size();
      out << Json{{"out", out_path}, {"splits", counts}}.dump(2) << "\n";
    } else if (train->parsed()) {
      auto config = open_config<RunConfig>(config_path);
      if (seed) config.train.seed = *seed;
      const GroupedDataset ds = open_dataset(data_dir);
      if (log_path.empty()) log_path = out_path + ".log.jsonl";
      std::ofstream log(log_path);
      if (!log) throw IoError("cannot write " + log_path);
      FitResult r = fit(ds, config.model, config.train, [&](const EpochLog& e) {
        log << epoch_log_to_json(e, config.train).dump() << "\n" << std::flush;
      });
      save_checkpoint(r.model, out_path);
      out << Json{{"checkpoint", out_path}, {"log", log_path}, {"best_epoch", r.best_epoch}}.dump(2)
          << "\n";
    } else if (eval->parsed()) {
      const IfamModel model = open_checkpoint(checkpoint_path);
      const GroupedDataset ds = open_dataset(data_dir);
      const InterventionPlan plan = plan_path.empty() ? InterventionPlan{} : open_plan(plan_path, model);
      emit(out, evaluate_split_checked(model, ds, split, plan), out_path);
    } else if (intervene->parsed()) {
      if (!loo && !q) throw CLI::ValidationError("intervene", "give --loo, --q or both");
      const IfamModel model = open_checkpoint(checkpoint_path);
      if (!model.has_selector()) throw ConfigError("model has no parts to intervene on");
      const GroupedDataset ds = open_dataset(data_dir);
      InterventionPlan plan;
      if (q) plan.table = calibrate_thresholds(model, find_split(ds, "train"), *q);
      Json report{{"split", split}};
      if (loo) {
        const MetricKind kind = metric_from_string(metric);
        LooResult r = loo_part_removal(model, find_split(ds, split), kind, plan, repeated);
        report["loo"] = loo_to_json(r, kind);
        plan = r.plan;
      }
      report["plan"] = plan;
      report["metrics"] = evaluate_split_checked(model, ds, split, plan);
      if (!out_path.empty()) write_json_file(out_path, Json(plan));
      out << report.dump(2) << "\n";
    } else if (masks->parsed()) {
      const IfamModel model = open_checkpoint(checkpoint_path);
      if (!model.has_selector()) throw ConfigError("dense model has no part maps");
      const GroupedDataset ds = open_dataset(data_dir);
      const InterventionPlan plan = plan_path.empty() ? InterventionPlan{} : open_plan(plan_path, model);
      fs::create_directories(out_path);
      const auto palette = png::part_palette(model.config.n_parts);
      int written = 0;
      for (const GroupedSample& s : find_split(ds, split).samples) {
        const Prediction p = run_pipeline(model, s.image, plan);
        png::write_indexed((fs::path(out_path) / (s.id + ".png")).string(),
                           pixel_part_map(p.assignment->hard, model.config),
                           model.config.image_size, model.config.image_size, palette);
        ++written;
      }
      out << Json{{"out", out_path}, {"written", written}}.dump(2) << "\n";
    } else if (flops->parsed()) {
      ModelConfig mc;
      if (!preset.empty()) {
        mc = vit_b_config();
      } else if (!config_path.empty()) {
        mc = open_config<ModelConfig>(config_path);
      } else {
        throw CLI::ValidationError("flops", "give --preset or --config");
      }
      // --tokens and --live count every token in the sequence, class and
      // register tokens included.
      const int specials = 1 + mc.n_registers;
      const int patches = tokens ? *tokens - specials : mc.num_patches();
      if (patches < 0) throw CLI::ValidationError("--tokens", "too few tokens for this model");
      if (live && *live < specials) {
        throw CLI::ValidationError("--live", "too few tokens for this model");
      }
      const FlopsBreakdown f = flops_estimate(mc, patches);
      Json j{{"tokens", patches + specials},
             {"gflops", f.gflops()},
             {"breakdown", Json{{"embedding", f.embedding},
                                {"projections", f.projections},
                                {"attention_scores", f.attention_scores},
                                {"mlp", f.mlp},
                                {"head", f.head}}}};
      if (live) {
        const double stage2 = flops_estimate(mc, *live - specials).gflops();
        j["stage2_gflops"] = stage2;
        j["two_stage_gflops"] = f.gflops() + stage2;
      }
      out << j.dump(2) << "\n";
    } else if (serve->parsed()) {
      ServiceOptions opts;
      opts.plans_dir = plans_dir;
      opts.static_dir = static_dir;
      Service service(open_checkpoint(checkpoint_path), open_dataset(data_dir), opts);
      spdlog::info("serving on port {}", port);
      if (!service.listen("0.0.0.0", port)) throw IoError("cannot listen on port " + std::to_string(port));
    }
  } catch (const CLI::Error& e) {
    err << "ifam: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    err << "ifam: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "ifam: invalid configuration: " << e.what() << "\n";
    return kBadConfig;
  } catch (const CheckpointError& e) {
    err << "ifam: " << e.what() << "\n";
    return kBadCheckpoint;
  } catch (const IoError& e) {
    err << "ifam: " << e.what() << "\n";
    return kIoError;
  } catch (const std::exception& e) {
    err << "ifam: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace ifam::cli
