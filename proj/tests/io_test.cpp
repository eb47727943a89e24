// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ifam/checkpoint.hpp"
#include "ifam/cli.hpp"
#include "ifam/json_io.hpp"
#include "support/fixtures.hpp"

using namespace ifam;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ifam_io_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

ModelConfig small_model() {
  ModelConfig c = ifam::testing::tiny_config(2);
  c.image_size = 32;
  c.patch_size = 8;
  c.n_classes = 4;
  return c;
}

}  // namespace

TEST_CASE("config JSON: round-trip and strict keys") {
  RunConfig rc;
  rc.model = small_model();
  rc.train.epochs = 3;
  rc.train.weights.background_prior = 5;
  rc.train.ablation.soft_masks = true;
  Json j = rc;
  CHECK(j.get<RunConfig>() == rc);

  Json bad = j;
  bad["train"]["learning_rate"] = 1;
  CHECK_THROWS_AS(bad.get<RunConfig>(), ConfigError);
  bad = j;
  bad["model"]["embed_dim"] = "wide";
  CHECK_THROWS_AS(bad.get<RunConfig>(), ConfigError);
  bad = j;
  bad["model"]["n_heads"] = 3;  // does not divide embed_dim
  CHECK_THROWS_AS(bad.get<RunConfig>(), ConfigError);

  // Absent keys keep their defaults.
  RunConfig partial = Json::parse(R"({"train": {"epochs": 2}})").get<RunConfig>();
  CHECK(partial.train.epochs == 2);
  CHECK(partial.train.lr_stage1 == TrainConfig{}.lr_stage1);
  CHECK(partial.model == ModelConfig{});

  DatasetSpec s = ifam::testing::tiny_spec(3);
  CHECK(Json(s).get<DatasetSpec>() == s);
}

TEST_CASE("plan JSON: +inf thresholds and validation") {
  InterventionPlan p;
  p.dropped_parts = {2};
  p.table = ThresholdTable{99, {0.25, std::numeric_limits<double>::infinity()}, {10, 0}, "cosine"};
  Json j = p;
  CHECK(j["tau"][1].is_null());
  InterventionPlan back = Json::parse(j.dump()).get<InterventionPlan>();
  CHECK(back.dropped_parts == p.dropped_parts);
  REQUIRE(back.table.has_value());
  CHECK(back.table->tau[0] == 0.25);
  CHECK(std::isinf(back.table->tau[1]));
  CHECK(back.table->counts == p.table->counts);
  CHECK(Json(back).dump() == j.dump());

  InterventionPlan none = Json::parse(R"({"dropped_parts": [1], "q": null})").get<InterventionPlan>();
  CHECK_FALSE(none.table.has_value());
  CHECK_THROWS_AS(Json::parse(R"({"tau": [0.1]})").get<InterventionPlan>(), ConfigError);
  CHECK_THROWS_AS(Json::parse(R"({"dropped": [1]})").get<InterventionPlan>(), ConfigError);
}

TEST_CASE("checkpoint: bit-exact round-trip") {
  IfamModel m = IfamModel::create(small_model(), InferencePath::soft, 7);
  m.params.snap_to_float();
  auto bytes = serialize_checkpoint(m);
  IfamModel back = deserialize_checkpoint(bytes);
  CHECK(back.config == m.config);
  CHECK(back.path == m.path);
  REQUIRE(back.params.size() == m.params.size());
  auto it = back.params.begin();
  for (const auto& [name, t] : m.params) {
    CHECK(it->first == name);
    CHECK(it->second.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(it->second[i] == t[i]);
    ++it;
  }
  CHECK(serialize_checkpoint(back) == bytes);
}

TEST_CASE("checkpoint: corruption is detected") {
  IfamModel m = IfamModel::create(small_model(), InferencePath::hard, 8);
  auto bytes = serialize_checkpoint(m);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(deserialize_checkpoint(flipped), CheckpointError);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(magic), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint({bytes.begin(), bytes.begin() + 20}), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.ifam"), std::exception);
}

TEST_CASE("cli: usage and error exit codes") {
  CHECK(run_cli({}).code == cli::kUsage);
  CHECK(run_cli({"frobnicate"}).code == cli::kUsage);
  CHECK(run_cli({"flops", "--bogus"}).code == cli::kUsage);
  CHECK(run_cli({"eval", "--data", "/nonexistent"}).code == cli::kUsage);  // missing --checkpoint

  fs::path dir = scratch("codes");
  write_text(dir / "bad.json", "{\"n_classes\": ");
  CHECK(run_cli({"gen", "--config", (dir / "bad.json").string(), "--out", (dir / "d").string()}).code ==
        cli::kBadConfig);
  write_text(dir / "unknown.json", R"({"n_classes": 4, "colour": 1})");
  CHECK(run_cli({"gen", "--config", (dir / "unknown.json").string(), "--out", (dir / "d").string()})
            .code == cli::kBadConfig);
  CHECK(run_cli({"gen", "--config", (dir / "missing.json").string(), "--out", (dir / "d").string()})
            .code == cli::kIoError);

  CHECK(run_cli({"flops", "--config", (dir / "missing.json").string()}).code == cli::kIoError);
  fs::remove_all(dir);
}

TEST_CASE("cli flops: ViT-B preset") {
  CliResult r = run_cli({"flops", "--preset", "vitb", "--tokens", "197", "--live", "60"});
  REQUIRE(r.code == cli::kOk);
  Json j = Json::parse(r.out);
  CHECK(std::abs(j["gflops"].get<double>() - 17.5) / 17.5 < 0.05);
  CHECK(std::abs(j["stage2_gflops"].get<double>() - 5.3) / 5.3 < 0.10);
  CHECK(std::abs(j["two_stage_gflops"].get<double>() - 22.8) / 22.8 < 0.10);
}

TEST_CASE("cli: gen, train, eval, intervene end to end") {
  fs::path dir = scratch("e2e");
  DatasetSpec spec = ifam::testing::tiny_spec(11);
  write_json_file((dir / "spec.json").string(), Json(spec));
  RunConfig rc;
  rc.model = small_model();
  rc.train.epochs = 1;
  write_json_file((dir / "run.json").string(), Json(rc));

  const std::string data = (dir / "data").string();
  const std::string ckpt = (dir / "model.ifam").string();
  REQUIRE(run_cli({"gen", "--config", (dir / "spec.json").string(), "--out", data}).code == cli::kOk);
  CliResult t = run_cli({"train", "--config", (dir / "run.json").string(), "--data", data, "--out", ckpt,
                     "--seed", "3"});
  REQUIRE(t.code == cli::kOk);
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(ckpt + ".log.jsonl"));

  CliResult e1 = run_cli({"eval", "--checkpoint", ckpt, "--data", data, "--seed", "1"});
  CliResult e2 = run_cli({"eval", "--checkpoint", ckpt, "--data", data, "--seed", "1"});
  REQUIRE(e1.code == cli::kOk);
  CHECK(e1.out == e2.out);
  Json rep = Json::parse(e1.out);
  CHECK(rep.contains("wga"));
  CHECK(rep.contains("bg_gap"));

  const std::string plan = (dir / "plan.json").string();
  CliResult iv = run_cli({"intervene", "--checkpoint", ckpt, "--data", data, "--q", "99", "--loo",
                      "--out", plan});
  REQUIRE(iv.code == cli::kOk);
  CHECK(fs::exists(plan));
  CliResult ep = run_cli({"eval", "--checkpoint", ckpt, "--data", data, "--plan", plan});
  CHECK(ep.code == cli::kOk);

  write_text(dir / "bad_plan.json", R"({"dropped_parts": [1, 2]})");
  CHECK(run_cli({"eval", "--checkpoint", ckpt, "--data", data, "--plan",
             (dir / "bad_plan.json").string()})
            .code == cli::kBadConfig);
  CHECK(run_cli({"eval", "--checkpoint", (dir / "spec.json").string(), "--data", data}).code ==
        cli::kBadCheckpoint);
  CHECK(run_cli({"eval", "--checkpoint", ckpt, "--data", data, "--split", "nope"}).code ==
        cli::kUsage);

  const std::string masks = (dir / "masks").string();
  CHECK(run_cli({"export-masks", "--checkpoint", ckpt, "--data", data, "--split", "val", "--out", masks})
            .code == cli::kOk);
  CHECK(std::distance(fs::directory_iterator(masks), fs::directory_iterator{}) == 12);
  fs::remove_all(dir);
}
