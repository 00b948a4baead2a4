// SPDX-License-Identifier: Apache-2.0
#include "pmurec/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pmurec/config.hpp"
#include "pmurec/experiment.hpp"
#include "pmurec/grid.hpp"
#include "pmurec/online.hpp"

namespace pmurec::cli {

using nlohmann::json;

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
};

ExperimentConfig load(const CommonArgs& common) {
  return load_config(common.config_file, common.overrides);
}

fs::path ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (!fs::is_directory(p))
    throw ComputeError("cannot create directory " + p.string());
  return p;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

struct LoadedArtifacts {
  grid::GridGraph g;
  grid::KHopOperatorSet ops;
  grid::EdgeFeatureMatrix edges;
};

LoadedArtifacts load_grid_artifacts(const ExperimentConfig& cfg) {
  LoadedArtifacts a;
  a.g = grid::load_grid(cfg.grid_path);
  a.ops = grid::build_khop_operators(a.g, cfg.k_hops);
  a.edges = grid::impedance_edge_features(a.g, cfg.shunt_eps);
  return a;
}

int cmd_gen_data(const ExperimentConfig& cfg) {
  const auto g = grid::load_grid(cfg.grid_path);
  auto windows =
      datagen::generate_windows(g, cfg.modal, cfg.data.n_windows, cfg.seed);
  const auto sched = datagen::make_default_schedule(
      cfg.data.n_windows, cfg.modal.window_len, g.pmu_count(),
      cfg.missing.random_rate, cfg.missing.target_rate, cfg.missing.event_len,
      cfg.seed ^ 0xb10cULL);
  const double realized = datagen::inject_missing(windows, sched);

  json gen;
  gen["seed"] = cfg.seed;
  gen["n_windows"] = cfg.data.n_windows;
  gen["realized_missing_rate"] = realized;
  gen["target_missing_rate"] = cfg.missing.target_rate;

  const fs::path dataset_dir = ensure_dir(fs::path(cfg.out_dir) / "dataset");
  const auto man = datagen::split_and_store(windows, cfg.data.ratios,
                                            dataset_dir, cfg.seed, gen.dump());
  write_manifest(dataset_dir, "gen-data", cfg);
  std::cout << "gen-data: " << man.counts.train << "/" << man.counts.test << "/"
            << man.counts.val << " windows (train/test/val), missing rate "
            << realized << "\n";
  return 0;
}

int cmd_train_aux(const ExperimentConfig& cfg) {
  auto a = load_grid_artifacts(cfg);
  const fs::path base(cfg.out_dir);
  const auto train_windows = datagen::load_split(base / "dataset", "train");

  auto model = lowrank::init_lowrank(cfg.modal.window_len, a.ops, cfg.aux, cfg.seed);
  const fs::path log_dir = ensure_dir(base / "logs");
  std::ofstream log(log_dir / "aux_train.csv");
  const auto records = lowrank::train(model, train_windows, a.ops, cfg.seed + 1, &log);

  const fs::path ckpt_dir = ensure_dir(base / "checkpoints");
  num::save_params(model.params, ckpt_dir / "aux.json");
  write_manifest(ckpt_dir, "train-aux", cfg);
  std::cout << "train-aux: " << records.size() << " steps, final loss "
            << (records.empty() ? 0.0 : records.back().total) << "\n";
  return 0;
}

lowrank::LowRankModel load_aux(const ExperimentConfig& cfg,
                               const grid::KHopOperatorSet& ops) {
  auto model = lowrank::init_lowrank(cfg.modal.window_len, ops, cfg.aux, cfg.seed);
  num::load_params(model.params, fs::path(cfg.out_dir) / "checkpoints" / "aux.json");
  return model;
}

stnet::STNetModel load_stnet(const ExperimentConfig& cfg,
                             const grid::KHopOperatorSet& ops) {
  auto model = stnet::init_stnet(ops.max_hops, cfg.st, cfg.seed + 2);
  num::load_params(model.params, fs::path(cfg.out_dir) / "checkpoints" / "stnet.json");
  return model;
}

int cmd_train_stnet(const ExperimentConfig& cfg, const std::string& variant) {
  if (variant != "full" && variant != "v2")
    throw ValidationError("train-stnet: variant must be full|v2");
  auto a = load_grid_artifacts(cfg);
  const fs::path base(cfg.out_dir);
  const auto train_windows = datagen::load_split(base / "dataset", "train");

  std::vector<std::array<Matrix, 2>> priors;
  const bool use_prior = variant == "full";
  if (use_prior) {
    const auto aux = load_aux(cfg, a.ops);
    priors.reserve(train_windows.size());
    for (const auto& w : train_windows)
      priors.push_back(lowrank::infer(aux, a.ops, w).imputed);
  }

  auto model = stnet::init_stnet(a.ops.max_hops, cfg.st, cfg.seed + 2);
  const fs::path log_dir = ensure_dir(base / "logs");
  std::ofstream log(log_dir / "stnet_train.csv");
  const auto records = stnet::train(model, train_windows,
                                    use_prior ? &priors : nullptr, a.ops,
                                    a.edges, cfg.seed + 3, &log);

  const fs::path ckpt_dir = ensure_dir(base / "checkpoints");
  num::save_params(model.params, ckpt_dir / "stnet.json");

  json card;
  card["blocks"] = 2;
  card["gat_hidden"] = cfg.st.gat_hidden;
  card["gcn_widths"] = cfg.st.gcn_widths;
  card["gru_hidden"] = cfg.st.gru_hidden;
  card["k_hops"] = cfg.k_hops;
  card["residual_alpha"] = cfg.st.residual_alpha;
  card["variant"] = variant;
  card["seed"] = cfg.seed;
  std::ofstream card_out(ckpt_dir / "stnet_card.json");
  card_out << card.dump(1) << "\n";

  write_manifest(ckpt_dir, "train-stnet", cfg);
  std::cout << "train-stnet: " << records.size() << " steps, final loss "
            << (records.empty() ? 0.0 : records.back().total) << "\n";
  return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg) {
  auto a = load_grid_artifacts(cfg);
  const fs::path base(cfg.out_dir);
  const auto test_windows = datagen::load_split(base / "dataset", "test");

  pipeline::TrainedModels models;
  models.aux = load_aux(cfg, a.ops);
  models.st = load_stnet(cfg, a.ops);
  models.has_aux = true;

  auto report = pipeline::evaluate_model(models, a.ops, a.edges, test_windows,
                                         "model", "full", cfg.seed);
  const fs::path rep_dir = ensure_dir(base / "reports");
  pipeline::write_reports_csv(rep_dir / "eval.csv", {report});
  pipeline::write_reports_json(rep_dir / "eval.json", {report});
  write_manifest(rep_dir, "evaluate", cfg);
  std::cout << "evaluate: rmse " << report.rmse << " mspe " << report.mspe
            << " over " << report.n_missing << " missing entries\n";
  return 0;
}

int cmd_baseline(const ExperimentConfig& cfg, const std::string& methods_arg) {
  const auto methods = split_csv(methods_arg);
  if (methods.empty()) throw ValidationError("baseline: no methods given");
  const fs::path base(cfg.out_dir);
  const auto test_windows = datagen::load_split(base / "dataset", "test");

  std::vector<pipeline::ReconstructionReport> reports;
  for (const auto& method : methods) {
    pipeline::MetricAccumulator acc;
    long nonconverged = 0;
    for (const auto& w : test_windows) {
      const auto x_tilde =
          pipeline::baseline_reconstruct(w, method, cfg.svt, &nonconverged);
      acc.add(w, pipeline::compose_reconstruction(w.x_obs, w.mask, x_tilde));
    }
    reports.push_back(acc.finish(method, "baseline", cfg.seed));
    std::cout << "baseline " << method << ": rmse " << reports.back().rmse
              << " mspe " << reports.back().mspe << "\n";
    if (nonconverged > 0)
      std::cerr << "baseline " << method << ": " << nonconverged
                << " channel completions hit max_iters\n";
  }
  const fs::path rep_dir = ensure_dir(base / "reports");
  pipeline::write_reports_csv(rep_dir / "baselines.csv", reports);
  pipeline::write_reports_json(rep_dir / "baselines.json", reports);
  write_manifest(rep_dir, "baseline", cfg);
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const std::string& variants_arg,
               const std::string& seeds_arg) {
  const auto variants = split_csv(variants_arg);
  if (variants.empty()) throw ValidationError("ablate: no variants given");
  std::vector<uint64_t> seeds;
  for (const auto& s : split_csv(seeds_arg)) seeds.push_back(std::stoull(s));
  if (seeds.empty()) seeds.push_back(cfg.seed);

  std::vector<pipeline::ReconstructionReport> reports;
  for (const uint64_t seed : seeds)
    for (const auto& variant : variants) {
      reports.push_back(pipeline::run_experiment(cfg, variant, seed));
      std::cout << "ablate " << variant << " seed " << seed << ": rmse "
                << reports.back().rmse << "\n";
    }

  const fs::path rep_dir = ensure_dir(fs::path(cfg.out_dir) / "reports");
  pipeline::write_reports_csv(rep_dir / "ablation.csv", reports);
  pipeline::write_reports_json(rep_dir / "ablation.json", reports);
  write_manifest(rep_dir, "ablate", cfg);
  return 0;
}

int cmd_online(const ExperimentConfig& cfg) {
  auto a = load_grid_artifacts(cfg);
  const fs::path base(cfg.out_dir);

  pipeline::TrainedModels models;
  models.aux = load_aux(cfg, a.ops);
  models.st = load_stnet(cfg, a.ops);
  models.has_aux = true;

  const auto test_windows = datagen::load_split(base / "dataset", "test");
  const double offline_mse =
      pipeline::observed_mse_on(models, a.ops, a.edges, test_windows);

  const auto stream = pipeline::build_stream(a.g, cfg, cfg.seed);
  const auto staged =
      online::run_online(models.aux, models.st, a.ops, a.edges, stream.adapt,
                         stream.eval, cfg.stream, offline_mse, cfg.seed);

  std::vector<pipeline::ReconstructionReport> reports{
      staged.initial, staged.self_supervised, staged.pseudo_label};
  const fs::path rep_dir = ensure_dir(base / "reports");
  pipeline::write_reports_csv(rep_dir / "online.csv", reports);
  pipeline::write_reports_json(rep_dir / "online.json", reports);
  write_manifest(rep_dir, "online", cfg);
  std::cout << "online: mspe " << staged.initial.mspe << " -> "
            << staged.self_supervised.mspe << " -> "
            << (staged.pseudo_label_reached
                    ? std::to_string(staged.pseudo_label.mspe)
                    : std::string("(pseudo-label stage not reached)"))
            << "\n";
  return 0;
}

int cmd_report(const std::string& inputs_arg, const std::string& out_file) {
  const auto inputs = split_csv(inputs_arg);
  if (inputs.empty()) throw ValidationError("report: no inputs given");
  std::vector<pipeline::ReconstructionReport> merged;
  for (const auto& file : inputs) {
    const auto part = pipeline::read_reports_csv(file);
    merged.insert(merged.end(), part.begin(), part.end());
  }
  std::sort(merged.begin(), merged.end(),
            [](const auto& x, const auto& y) {
              return std::tie(x.method, x.variant, x.stage, x.seed) <
                     std::tie(y.method, y.variant, y.stage, y.seed);
            });
  pipeline::write_reports_csv(out_file, merged);
  std::cout << "report: merged " << merged.size() << " rows into " << out_file
            << "\n";
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"PMU stream reconstruction: low-rank auxiliary model + "
               "spatio-temporal graph network"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string variant = "full";
  std::string methods = "svt,linear_interp";
  std::string variants = "full,v1,v2";
  std::string seeds;
  std::string inputs;
  std::string out_file = "merged.csv";

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", common.config_file, "JSON config file");
    cmd->add_option("--set", common.overrides,
                    "dotted-key override, e.g. --set data.n_windows=100");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen);
  auto* aux = app.add_subcommand("train-aux", "train the low-rank auxiliary model");
  add_common(aux);
  auto* st = app.add_subcommand("train-stnet", "train the reconstruction model");
  add_common(st);
  st->add_option("--variant", variant, "full or v2 (zero prior)");
  auto* ev = app.add_subcommand("evaluate", "evaluate on the test split");
  add_common(ev);
  auto* bl = app.add_subcommand("baseline", "run baseline reconstructions");
  add_common(bl);
  bl->add_option("--methods", methods, "comma list: svt,linear_interp");
  auto* ab = app.add_subcommand("ablate", "run ablation variants");
  add_common(ab);
  ab->add_option("--variants", variants, "comma list: full,v1,v2");
  ab->add_option("--seeds", seeds, "comma list of seeds");
  auto* on = app.add_subcommand("online", "run the streaming adaptation protocol");
  add_common(on);
  auto* rep = app.add_subcommand("report", "merge report CSVs");
  rep->add_option("--inputs", inputs, "comma list of report CSV files");
  rep->add_option("--out", out_file, "merged CSV path");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return 0;
    }
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(load(common));
    if (aux->parsed()) return cmd_train_aux(load(common));
    if (st->parsed()) return cmd_train_stnet(load(common), variant);
    if (ev->parsed()) return cmd_evaluate(load(common));
    if (bl->parsed()) return cmd_baseline(load(common), methods);
    if (ab->parsed()) {
      auto cfg = load(common);
      return cmd_ablate(cfg, variants, seeds.empty() ? std::to_string(cfg.seed)
                                                     : seeds);
    }
    if (on->parsed()) return cmd_online(load(common));
    if (rep->parsed()) return cmd_report(inputs, out_file);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace pmurec::cli
