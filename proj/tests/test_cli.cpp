// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pmurec/cli.hpp"
#include "pmurec/config.hpp"
#include "pmurec/numeric.hpp"
#include "pmurec/stnet.hpp"
#include "test_support.hpp"

using namespace pmurec;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> tiny_args(const std::string& cmd, const fs::path& out) {
  return {cmd,
          "--set", "grid=" + testsup::data_path("grids/case39.json"),
          "--set", "out_dir=" + out.string(),
          "--set", "data.n_windows=40",
          "--set", "aux.epochs=2",
          "--set", "stnet.epochs=2",
          "--set", "seed=5"};
}

}  // namespace

TEST_CASE("cli: bad invocations exit with code 1") {
  CHECK(cli::dispatch({"no-such-command"}) == 1);
  CHECK(cli::dispatch({}) == 1);
  CHECK(cli::dispatch({"gen-data", "--set", "grid=/no/such/grid.json"}) == 1);
  CHECK(cli::dispatch({"evaluate", "--set", "grid=/no/such/grid.json"}) == 1);
  CHECK(cli::dispatch({"gen-data", "--config", "/no/such/config.json"}) == 1);
}

TEST_CASE("cli: config overrides and manifest round trip") {
  const std::vector<std::string> overrides{"data.n_windows=123", "aux.lr=0.5",
                                           "svt.shrink=soft",
                                           "grid=some/grid.json"};
  const auto cfg = config_from_json_text("", overrides);
  CHECK(cfg.data.n_windows == 123);
  CHECK(cfg.aux.lr == 0.5);
  CHECK(cfg.svt.soft);
  CHECK(cfg.grid_path == "some/grid.json");

  // the canonical echo re-parses to the same effective config
  const auto echo = config_to_json_text(cfg);
  const auto cfg2 = config_from_json_text(echo, {});
  CHECK(config_to_json_text(cfg2) == echo);
  CHECK(config_hash(cfg2) == config_hash(cfg));

  CHECK_THROWS_AS(config_from_json_text("", {"no_equals_sign"}), ValidationError);
  CHECK_THROWS_AS(config_from_json_text("{bad json", {}), ValidationError);
  CHECK_THROWS_AS(config_from_json_text(R"({"aux":{"norm":"bogus"}})", {}),
                  ValidationError);
}

TEST_CASE("cli: gen-data writes a loadable dataset with a manifest") {
  const auto out = fresh_dir("pmurec_cli_gen");
  REQUIRE(cli::dispatch(tiny_args("gen-data", out)) == 0);
  CHECK(fs::exists(out / "dataset" / "train.jsonl"));
  CHECK(fs::exists(out / "dataset" / "test.jsonl"));
  CHECK(fs::exists(out / "dataset" / "val.jsonl"));
  CHECK(fs::exists(out / "dataset" / "manifest.json"));

  const auto man = datagen::read_manifest(out / "dataset");
  CHECK(man.counts.train == 28);
  CHECK(man.counts.test == 8);
  CHECK(man.counts.val == 4);

  const auto manifest = nlohmann::json::parse(slurp(out / "dataset" / "manifest.json"));
  CHECK(manifest.contains("counts"));
  // the command echo lands beside the dataset under its own name
  const auto run_manifest =
      nlohmann::json::parse(slurp(out / "dataset" / "run_manifest.json"));
  CHECK(run_manifest.contains("config_hash"));
  CHECK(run_manifest.at("command") == "gen-data");
  fs::remove_all(out);
}

TEST_CASE("cli: evaluate reports zero error for an exact checkpoint") {
  const auto out = fresh_dir("pmurec_cli_perfect");
  // constant windows: amp_scale 0 and no noise leave x_true at the baseline
  auto args = tiny_args("gen-data", out);
  args.insert(args.end(), {"--set", "modal.amp_scale=0", "--set",
                           "modal.noise_sigma=0"});
  REQUIRE(cli::dispatch(args) == 0);

  // handcrafted checkpoints: all-zero nets whose head bias emits the
  // baseline exactly
  const auto cfg = config_from_json_text("", {"grid=" + testsup::data_path("grids/case39.json"),
                                              "out_dir=" + out.string()});
  const auto g = grid::load_grid(cfg.grid_path);
  const auto ops = grid::build_khop_operators(g, cfg.k_hops);

  auto aux = lowrank::init_lowrank(cfg.modal.window_len, ops, cfg.aux, cfg.seed);
  for (const auto& name : aux.params.names()) aux.params.value(name).setZero();

  auto st = stnet::init_stnet(ops.max_hops, cfg.st, cfg.seed + 2);
  for (const auto& name : st.params.names()) st.params.value(name).setZero();
  st.params.value("head.b")(0, 0) = 1.0;  // magnitude baseline
  st.params.value("head.b")(0, 1) = 0.0;  // angle baseline

  fs::create_directories(out / "checkpoints");
  num::save_params(aux.params, out / "checkpoints" / "aux.json");
  num::save_params(st.params, out / "checkpoints" / "stnet.json");

  std::vector<std::string> eval_args{"evaluate",
                                     "--set", "grid=" + testsup::data_path("grids/case39.json"),
                                     "--set", "out_dir=" + out.string(),
                                     "--set", "modal.amp_scale=0",
                                     "--set", "modal.noise_sigma=0",
                                     "--set", "data.n_windows=40",
                                     "--set", "seed=5"};
  REQUIRE(cli::dispatch(eval_args) == 0);
  const auto reports = pipeline::read_reports_csv(out / "reports" / "eval.csv");
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].rmse == 0.0);
  CHECK(reports[0].mspe == 0.0);
  fs::remove_all(out);
}

TEST_CASE("cli: pipeline determinism end to end" * doctest::timeout(300)) {
  const auto out1 = fresh_dir("pmurec_cli_det1");
  const auto out2 = fresh_dir("pmurec_cli_det2");
  for (const auto& out : {out1, out2}) {
    REQUIRE(cli::dispatch(tiny_args("gen-data", out)) == 0);
    REQUIRE(cli::dispatch(tiny_args("train-aux", out)) == 0);
    REQUIRE(cli::dispatch(tiny_args("train-stnet", out)) == 0);
    REQUIRE(cli::dispatch(tiny_args("evaluate", out)) == 0);
    REQUIRE(cli::dispatch(tiny_args("baseline", out)) == 0);
  }
  for (const std::string rel :
       {"dataset/train.jsonl", "checkpoints/aux.json", "checkpoints/stnet.json",
        "reports/eval.csv", "reports/eval.json", "reports/baselines.csv"}) {
    CHECK(slurp(out1 / rel) == slurp(out2 / rel));
  }
  // merged comparison table
  REQUIRE(cli::dispatch({"report",
                         "--inputs",
                         (out1 / "reports" / "eval.csv").string() + "," +
                             (out1 / "reports" / "baselines.csv").string(),
                         "--out", (out1 / "reports" / "merged.csv").string()}) == 0);
  const auto merged = pipeline::read_reports_csv(out1 / "reports" / "merged.csv");
  CHECK(merged.size() == 3);
  fs::remove_all(out1);
  fs::remove_all(out2);
}
