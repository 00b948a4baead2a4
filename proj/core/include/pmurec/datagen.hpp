// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pmurec/grid.hpp"
#include "pmurec/types.hpp"

namespace pmurec::datagen {

/// Damped-oscillation generator settings. Spatial mode shapes are
/// Laplacian eigenvectors of the bus graph, so every noise-free window
/// has numerical rank <= n_modes + 1 per channel.
struct ModalConfig {
  int n_modes = 3;
  double freq_min = 0.3;   // Hz
  double freq_max = 1.5;   // Hz
  double damp_min = 0.05;  // 1/s
  double damp_max = 0.4;   // 1/s
  double amp_scale = 0.05; // p.u.
  double noise_sigma = 1e-3;
  double sample_rate = 50.0;  // Hz
  int window_len = 8;
  double mag_base_shift = 0.0;  // offset on the 1.0 p.u. magnitude baseline

  void validate() const;
};

enum class MissPattern : uint8_t {
  Observed = 0,
  Random = 1,
  SingleNode = 2,
  MultiNode = 3,
  BlockWise = 4,
};

const char* pattern_name(MissPattern p);

using LabelMatrix = Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// One T x N_p x 2 window. Channel 0 = voltage magnitude (p.u.), channel
/// 1 = angle (rad). The mask is shared across channels; missing entries
/// are stored as 0 with the mask as the single source of truth.
struct MeasurementWindow {
  long id = 0;
  std::array<Matrix, 2> x_true;
  std::array<Matrix, 2> x_obs;
  Matrix mask;          // T x N_p in {0,1}
  LabelMatrix labels;   // MissPattern codes per cell

  int steps() const { return static_cast<int>(mask.rows()); }
  int nodes() const { return static_cast<int>(mask.cols()); }
};

struct MissingEvent {
  MissPattern pattern = MissPattern::BlockWise;
  std::vector<int> nodes;  // PMU positions
  long t_begin = 0;        // global stream step, inclusive
  long t_end = 0;          // exclusive
};

struct MissingSchedule {
  double random_rate = 0.0;
  std::vector<MissingEvent> events;
  uint64_t seed = 0;
  double target_rate = -1.0;  // < 0: no realized-rate check
};

/// Fully observed windows (mask all ones), deterministic in `seed`.
/// Values live at the PMU buses of `g`; pass a grid whose pmu_nodes cover
/// all buses for a fully observed system.
std::vector<MeasurementWindow> generate_windows(const grid::GridGraph& g,
                                                const ModalConfig& cfg,
                                                int n_windows, uint64_t seed);

/// Applies random drops and events over the concatenated stream timeline
/// (window w, row t = global step w*T + t). Returns the realized missing
/// fraction; warns if it misses target_rate by more than 2 points.
double inject_missing(std::vector<MeasurementWindow>& windows,
                      const MissingSchedule& schedule);

/// Default desk-scale schedule: random drops plus block events (with a
/// few single-node and single-time events mixed in) sized so the realized
/// overall rate lands on target_rate.
MissingSchedule make_default_schedule(int n_windows, int window_len, int n_pmu,
                                      double random_rate, double target_rate,
                                      int event_len, uint64_t seed);

struct SplitCounts {
  long train = 0;
  long test = 0;
  long val = 0;
};

/// Deterministic id-hash ordering with exact largest-remainder quotas;
/// returns window indices per split (train/test/val).
std::array<std::vector<size_t>, 3> split_indices(
    const std::vector<MeasurementWindow>& windows,
    const std::array<double, 3>& ratios);

struct DatasetManifest {
  SplitCounts counts;
  uint64_t seed = 0;
  double realized_missing_rate = 0.0;
  double target_missing_rate = -1.0;
  std::string extra_json;  // generator config echo, optional
};

/// Deterministic split by window-id hash with exact largest-remainder
/// quotas; writes train/test/val JSON-lines files plus manifest.json.
DatasetManifest split_and_store(const std::vector<MeasurementWindow>& windows,
                                const std::array<double, 3>& ratios,
                                const std::filesystem::path& dir,
                                uint64_t seed,
                                const std::string& extra_json = "");

std::vector<MeasurementWindow> load_split(const std::filesystem::path& dir,
                                          const std::string& split);

DatasetManifest read_manifest(const std::filesystem::path& dir);

}  // namespace pmurec::datagen
