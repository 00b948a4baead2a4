// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "pmurec/datagen.hpp"
#include "pmurec/lowrank.hpp"
#include "pmurec/online.hpp"
#include "pmurec/pipeline.hpp"
#include "pmurec/stnet.hpp"

namespace pmurec {

struct MissingCfg {
  double random_rate = 0.30;
  double target_rate = 0.60;
  int event_len = 30;
};

struct DataCfg {
  int n_windows = 2000;
  std::array<double, 3> ratios{0.70, 0.20, 0.10};
};

/// One config drives every subcommand; seeds are always explicit.
struct ExperimentConfig {
  std::string grid_path;
  std::string out_dir = "runs/out";
  uint64_t seed = 7;
  int k_hops = 3;
  double shunt_eps = 1e-2;
  datagen::ModalConfig modal;
  MissingCfg missing;
  DataCfg data;
  lowrank::LowRankConfig aux;
  stnet::STNetConfig st;
  pipeline::SvtConfig svt;
  online::StreamConfig stream;
};

/// Defaults -> file (optional) -> dotted-key overrides ("a.b.c=val").
ExperimentConfig load_config(const std::filesystem::path& file,
                             const std::vector<std::string>& overrides);

ExperimentConfig config_from_json_text(const std::string& text,
                                       const std::vector<std::string>& overrides);

/// Canonical JSON echo of the effective config (sorted keys).
std::string config_to_json_text(const ExperimentConfig& cfg);

/// FNV-1a hash of the canonical echo, as fixed-width hex.
std::string config_hash(const ExperimentConfig& cfg);

/// Writes manifest.json (command, effective config, hash, seed, version)
/// beside the command's outputs.
void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const ExperimentConfig& cfg);

}  // namespace pmurec
