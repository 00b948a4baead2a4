// SPDX-License-Identifier: Apache-2.0
#include "pmurec/datagen.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "pmurec/rng.hpp"

namespace pmurec::datagen {

using nlohmann::json;

void ModalConfig::validate() const {
  if (n_modes < 1) throw ValidationError("modal: n_modes must be >= 1");
  if (window_len < 2) throw ValidationError("modal: window_len must be >= 2");
  if (noise_sigma < 0.0) throw ValidationError("modal: noise_sigma must be >= 0");
  if (sample_rate <= 0.0) throw ValidationError("modal: sample_rate must be > 0");
  if (!(freq_min > 0.0 && freq_max < sample_rate / 2.0 && freq_min <= freq_max))
    throw ValidationError("modal: freq range must lie within (0, sample_rate/2)");
  if (!(damp_min >= 0.0 && damp_min <= damp_max))
    throw ValidationError("modal: bad damping range");
  if (amp_scale < 0.0) throw ValidationError("modal: amp_scale must be >= 0");
}

const char* pattern_name(MissPattern p) {
  switch (p) {
    case MissPattern::Observed: return "observed";
    case MissPattern::Random: return "random";
    case MissPattern::SingleNode: return "single_node";
    case MissPattern::MultiNode: return "multi_node";
    case MissPattern::BlockWise: return "block_wise";
  }
  return "?";
}

namespace {

// Unweighted-Laplacian eigenvectors, ascending eigenvalue order, sign
// fixed so each vector's largest-magnitude entry is positive.
Matrix laplacian_modes(const grid::GridGraph& g, int n_modes) {
  const int n = g.n_bus;
  Matrix lap = Matrix::Zero(n, n);
  for (const auto& e : g.edges) {
    lap(e.i, e.j) -= 1.0;
    lap(e.j, e.i) -= 1.0;
    lap(e.i, e.i) += 1.0;
    lap(e.j, e.j) += 1.0;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(lap);
  if (eig.info() != Eigen::Success)
    throw ComputeError("datagen: Laplacian eigendecomposition failed");
  const int m = std::min(n_modes, n - 1);
  Matrix modes(n, n_modes);
  for (int k = 0; k < n_modes; ++k) {
    // skip the constant eigenvector; recycle modes if the graph is tiny
    Vector v = eig.eigenvectors().col(1 + (k % std::max(m, 1)));
    int arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    modes.col(k) = v;
  }
  return modes;
}

constexpr double kMagBase = 1.0;
constexpr double kMagLo = 0.85;
constexpr double kMagHi = 1.15;
constexpr double kOscCap = 0.12;  // leaves noise headroom inside the band

}  // namespace

std::vector<MeasurementWindow> generate_windows(const grid::GridGraph& g,
                                                const ModalConfig& cfg,
                                                int n_windows, uint64_t seed) {
  cfg.validate();
  if (n_windows < 1) throw ValidationError("datagen: n_windows must be >= 1");

  const Matrix modes_full = laplacian_modes(g, cfg.n_modes);
  const int np = g.pmu_count();
  Matrix modes(np, cfg.n_modes);
  for (int a = 0; a < np; ++a)
    modes.row(a) = modes_full.row(g.pmu_nodes[static_cast<size_t>(a)]);

  const int t_len = cfg.window_len;
  const Rng base(seed);
  std::vector<MeasurementWindow> out;
  out.reserve(static_cast<size_t>(n_windows));

  for (int w = 0; w < n_windows; ++w) {
    Rng rng = base.fork(static_cast<uint64_t>(w));
    MeasurementWindow win;
    win.id = w;
    win.mask = Matrix::Ones(t_len, np);
    win.labels = LabelMatrix::Zero(t_len, np);

    for (int ch = 0; ch < 2; ++ch) {
      const double base_level = (ch == 0) ? kMagBase + cfg.mag_base_shift : 0.0;
      Matrix osc = Matrix::Zero(t_len, np);
      for (int m = 0; m < cfg.n_modes; ++m) {
        const double f = rng.uniform(cfg.freq_min, cfg.freq_max);
        const double zeta = rng.uniform(cfg.damp_min, cfg.damp_max);
        const double phi = rng.uniform(-std::numbers::pi, std::numbers::pi);
        const double amp = cfg.amp_scale * rng.uniform(0.5, 1.0);
        Vector profile(t_len);
        for (int t = 0; t < t_len; ++t) {
          const double tt = static_cast<double>(t) / cfg.sample_rate;
          profile(t) = std::exp(-zeta * tt) *
                       std::cos(2.0 * std::numbers::pi * f * tt + phi);
        }
        osc += amp * profile * modes.col(m).transpose();
      }
      const double peak = osc.cwiseAbs().maxCoeff();
      if (peak > kOscCap) osc *= kOscCap / peak;  // uniform scale keeps rank

      Matrix x = osc.array() + base_level;
      if (cfg.noise_sigma > 0.0)
        for (int t = 0; t < t_len; ++t)
          for (int a = 0; a < np; ++a)
            x(t, a) += cfg.noise_sigma * rng.gaussian();
      if (ch == 0)
        x = x.cwiseMax(kMagLo).cwiseMin(kMagHi);
      else
        x = x.cwiseMax(-std::numbers::pi + 1e-9).cwiseMin(std::numbers::pi);
      win.x_true[static_cast<size_t>(ch)] = x;
      win.x_obs[static_cast<size_t>(ch)] = x;
    }
    out.push_back(std::move(win));
  }
  return out;
}

double inject_missing(std::vector<MeasurementWindow>& windows,
                      const MissingSchedule& schedule) {
  if (windows.empty()) throw ValidationError("inject_missing: no windows");
  const int t_len = windows.front().steps();
  const int np = windows.front().nodes();
  const long total_steps = static_cast<long>(windows.size()) * t_len;

  Rng rng(schedule.seed);
  for (auto& win : windows) {
    win.mask = Matrix::Ones(t_len, np);
    win.labels = LabelMatrix::Zero(t_len, np);
    if (schedule.random_rate > 0.0) {
      for (int t = 0; t < t_len; ++t)
        for (int a = 0; a < np; ++a)
          if (rng.uniform() < schedule.random_rate) {
            win.mask(t, a) = 0.0;
            win.labels(t, a) = static_cast<uint8_t>(MissPattern::Random);
          }
    }
  }

  for (const auto& ev : schedule.events) {
    if (ev.t_begin < 0 || ev.t_end > total_steps || ev.t_begin >= ev.t_end)
      throw ValidationError("inject_missing: event span outside stream");
    for (int node : ev.nodes)
      if (node < 0 || node >= np)
        throw ValidationError("inject_missing: event node out of range");
    for (long step = ev.t_begin; step < ev.t_end; ++step) {
      auto& win = windows[static_cast<size_t>(step / t_len)];
      const int t = static_cast<int>(step % t_len);
      for (int node : ev.nodes) {
        win.mask(t, node) = 0.0;
        win.labels(t, node) = static_cast<uint8_t>(ev.pattern);
      }
    }
  }

  long missing = 0;
  for (auto& win : windows) {
    for (int ch = 0; ch < 2; ++ch)
      win.x_obs[static_cast<size_t>(ch)] =
          win.mask.cwiseProduct(win.x_true[static_cast<size_t>(ch)]);
    missing += static_cast<long>((win.mask.array() == 0.0).count());
  }
  const double realized =
      static_cast<double>(missing) / static_cast<double>(total_steps * np);
  if (schedule.target_rate >= 0.0 &&
      std::abs(realized - schedule.target_rate) > 0.02) {
    std::cerr << "inject_missing: warning: realized missing rate " << realized
              << " misses target " << schedule.target_rate
              << " by more than 2 points\n";
  }
  return realized;
}

MissingSchedule make_default_schedule(int n_windows, int window_len, int n_pmu,
                                      double random_rate, double target_rate,
                                      int event_len, uint64_t seed) {
  if (target_rate < random_rate)
    throw ValidationError("schedule: target_rate below random_rate");
  MissingSchedule sched;
  sched.random_rate = random_rate;
  sched.seed = seed;
  sched.target_rate = target_rate;

  const long total_steps = static_cast<long>(n_windows) * window_len;
  const long total_cells = total_steps * n_pmu;
  // event coverage needed so that random + events compose to the target
  const double coverage =
      1.0 - (1.0 - target_rate) / std::max(1e-12, 1.0 - random_rate);
  const long cells_needed = static_cast<long>(coverage * static_cast<double>(total_cells));
  if (cells_needed <= 0) return sched;

  Rng rng(seed ^ 0x5eedULL);
  std::vector<std::vector<char>> covered(
      static_cast<size_t>(total_steps), std::vector<char>(static_cast<size_t>(n_pmu), 0));
  const int event_nodes = std::min(n_pmu, n_pmu / 2 + 2);  // over half the PMUs
  long covered_count = 0;
  int idx = 0;
  const int max_events = 64 + static_cast<int>(4 * cells_needed /
                                               std::max(1L, static_cast<long>(event_len) * event_nodes));
  while (covered_count < cells_needed && idx < max_events) {
    MissingEvent ev;
    const int kind = idx % 5;
    if (kind == 3) {
      ev.pattern = MissPattern::SingleNode;
      ev.nodes = {rng.uniform_int(0, n_pmu - 1)};
      const long len = std::min<long>(event_len, total_steps);
      ev.t_begin = rng.uniform_int(0, static_cast<int>(total_steps - len));
      ev.t_end = ev.t_begin + len;
    } else if (kind == 4) {
      ev.pattern = MissPattern::MultiNode;
      while (static_cast<int>(ev.nodes.size()) < event_nodes) {
        const int n = rng.uniform_int(0, n_pmu - 1);
        if (std::find(ev.nodes.begin(), ev.nodes.end(), n) == ev.nodes.end())
          ev.nodes.push_back(n);
      }
      ev.t_begin = rng.uniform_int(0, static_cast<int>(total_steps - 1));
      ev.t_end = ev.t_begin + 1;
    } else {
      ev.pattern = MissPattern::BlockWise;
      while (static_cast<int>(ev.nodes.size()) < event_nodes) {
        const int n = rng.uniform_int(0, n_pmu - 1);
        if (std::find(ev.nodes.begin(), ev.nodes.end(), n) == ev.nodes.end())
          ev.nodes.push_back(n);
      }
      const long len = std::min<long>(event_len, total_steps);
      ev.t_begin = rng.uniform_int(0, static_cast<int>(total_steps - len));
      ev.t_end = ev.t_begin + len;
    }
    std::sort(ev.nodes.begin(), ev.nodes.end());
    for (long s = ev.t_begin; s < ev.t_end; ++s)
      for (int n : ev.nodes) {
        auto& c = covered[static_cast<size_t>(s)][static_cast<size_t>(n)];
        if (!c) {
          c = 1;
          ++covered_count;
        }
      }
    sched.events.push_back(std::move(ev));
    ++idx;
  }
  return sched;
}

namespace {

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& rows) {
  const Eigen::Index nr = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index nc = nr > 0 ? static_cast<Eigen::Index>(rows.at(0).size()) : 0;
  Matrix m(nr, nc);
  for (Eigen::Index r = 0; r < nr; ++r)
    for (Eigen::Index c = 0; c < nc; ++c)
      m(r, c) = rows.at(static_cast<size_t>(r)).at(static_cast<size_t>(c)).get<double>();
  return m;
}

json window_to_json(const MeasurementWindow& w) {
  json j;
  j["id"] = w.id;
  // t-major nested arrays: [t][node][channel]
  json xt = json::array(), xo = json::array();
  for (int t = 0; t < w.steps(); ++t) {
    json rt = json::array(), ro = json::array();
    for (int a = 0; a < w.nodes(); ++a) {
      rt.push_back({w.x_true[0](t, a), w.x_true[1](t, a)});
      ro.push_back({w.x_obs[0](t, a), w.x_obs[1](t, a)});
    }
    xt.push_back(std::move(rt));
    xo.push_back(std::move(ro));
  }
  j["x_true"] = std::move(xt);
  j["x_obs"] = std::move(xo);
  json mask = json::array(), labels = json::array();
  for (int t = 0; t < w.steps(); ++t) {
    json mrow = json::array(), lrow = json::array();
    for (int a = 0; a < w.nodes(); ++a) {
      mrow.push_back(static_cast<int>(w.mask(t, a)));
      lrow.push_back(static_cast<int>(w.labels(t, a)));
    }
    mask.push_back(std::move(mrow));
    labels.push_back(std::move(lrow));
  }
  j["mask"] = std::move(mask);
  j["pattern_labels"] = std::move(labels);
  return j;
}

MeasurementWindow window_from_json(const json& j) {
  MeasurementWindow w;
  w.id = j.at("id").get<long>();
  const auto& xt = j.at("x_true");
  const auto& xo = j.at("x_obs");
  const int t_len = static_cast<int>(xt.size());
  const int np = static_cast<int>(xt.at(0).size());
  for (int ch = 0; ch < 2; ++ch) {
    w.x_true[static_cast<size_t>(ch)].resize(t_len, np);
    w.x_obs[static_cast<size_t>(ch)].resize(t_len, np);
  }
  for (int t = 0; t < t_len; ++t)
    for (int a = 0; a < np; ++a)
      for (int ch = 0; ch < 2; ++ch) {
        w.x_true[static_cast<size_t>(ch)](t, a) =
            xt.at(static_cast<size_t>(t)).at(static_cast<size_t>(a)).at(static_cast<size_t>(ch)).get<double>();
        w.x_obs[static_cast<size_t>(ch)](t, a) =
            xo.at(static_cast<size_t>(t)).at(static_cast<size_t>(a)).at(static_cast<size_t>(ch)).get<double>();
      }
  w.mask = matrix_from_json(j.at("mask"));
  const auto& lj = j.at("pattern_labels");
  w.labels.resize(t_len, np);
  for (int t = 0; t < t_len; ++t)
    for (int a = 0; a < np; ++a)
      w.labels(t, a) = static_cast<uint8_t>(
          lj.at(static_cast<size_t>(t)).at(static_cast<size_t>(a)).get<int>());
  return w;
}

}  // namespace

std::array<std::vector<size_t>, 3> split_indices(
    const std::vector<MeasurementWindow>& windows,
    const std::array<double, 3>& ratios) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError("split: ratios must sum to 1");

  std::vector<size_t> idx(windows.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<uint64_t> hashes(windows.size());
  for (size_t i = 0; i < windows.size(); ++i) {
    const long id = windows[i].id;
    hashes[i] = fnv1a64(&id, sizeof(id));
  }
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    return hashes[a] != hashes[b] ? hashes[a] < hashes[b]
                                  : windows[a].id < windows[b].id;
  });

  const long n = static_cast<long>(windows.size());
  std::array<long, 3> quota{};
  std::array<double, 3> frac{};
  long assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = ratios[static_cast<size_t>(s)] * static_cast<double>(n);
    quota[static_cast<size_t>(s)] = static_cast<long>(std::floor(exact));
    frac[static_cast<size_t>(s)] = exact - std::floor(exact);
    assigned += quota[static_cast<size_t>(s)];
  }
  while (assigned < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (frac[static_cast<size_t>(s)] > frac[static_cast<size_t>(best)]) best = s;
    quota[static_cast<size_t>(best)] += 1;
    frac[static_cast<size_t>(best)] = -1.0;
    ++assigned;
  }

  std::array<std::vector<size_t>, 3> out;
  size_t cursor = 0;
  for (int s = 0; s < 3; ++s)
    for (long k = 0; k < quota[static_cast<size_t>(s)]; ++k, ++cursor)
      out[static_cast<size_t>(s)].push_back(idx[cursor]);
  return out;
}

DatasetManifest split_and_store(const std::vector<MeasurementWindow>& windows,
                                const std::array<double, 3>& ratios,
                                const std::filesystem::path& dir,
                                uint64_t seed, const std::string& extra_json) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (!std::filesystem::is_directory(dir))
    throw ComputeError("split: cannot create directory " + dir.string());

  const auto splits = split_indices(windows, ratios);
  const std::array<std::string, 3> split_names{"train", "test", "val"};
  DatasetManifest man;
  man.seed = seed;
  long missing = 0, cells = 0;
  for (int s = 0; s < 3; ++s) {
    const auto file = dir / (split_names[static_cast<size_t>(s)] + ".jsonl");
    std::ofstream out(file);
    if (!out) throw ComputeError("split: cannot write " + file.string());
    for (size_t i : splits[static_cast<size_t>(s)]) {
      const auto& w = windows[i];
      out << window_to_json(w).dump() << "\n";
      missing += static_cast<long>((w.mask.array() == 0.0).count());
      cells += static_cast<long>(w.mask.size());
    }
    if (splits[static_cast<size_t>(s)].empty())
      std::cerr << "split: warning: '" << split_names[static_cast<size_t>(s)]
                << "' split is empty\n";
  }
  man.counts = {static_cast<long>(splits[0].size()),
                static_cast<long>(splits[1].size()),
                static_cast<long>(splits[2].size())};
  man.realized_missing_rate =
      cells > 0 ? static_cast<double>(missing) / static_cast<double>(cells) : 0.0;

  json mj;
  mj["format"] = "pmurec-dataset";
  mj["version"] = 1;
  mj["counts"] = {{"train", man.counts.train},
                  {"test", man.counts.test},
                  {"val", man.counts.val}};
  mj["seed"] = seed;
  mj["realized_missing_rate"] = man.realized_missing_rate;
  mj["pattern_legend"] = {{"0", "observed"}, {"1", "random"}, {"2", "single_node"},
                          {"3", "multi_node"}, {"4", "block_wise"}};
  if (!extra_json.empty()) mj["generator"] = json::parse(extra_json);
  std::ofstream mout(dir / "manifest.json");
  if (!mout) throw ComputeError("split: cannot write manifest");
  mout << mj.dump(1) << "\n";
  return man;
}

std::vector<MeasurementWindow> load_split(const std::filesystem::path& dir,
                                          const std::string& split) {
  const auto file = dir / (split + ".jsonl");
  std::ifstream in(file);
  if (!in) throw ValidationError("dataset: cannot open " + file.string());
  std::vector<MeasurementWindow> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(window_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ValidationError("dataset: bad record in " + file.string() + ": " +
                            e.what());
    }
  }
  return out;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ValidationError("dataset: cannot open manifest in " + dir.string());
  json mj;
  in >> mj;
  DatasetManifest man;
  man.counts.train = mj.at("counts").at("train").get<long>();
  man.counts.test = mj.at("counts").at("test").get<long>();
  man.counts.val = mj.at("counts").at("val").get<long>();
  man.seed = mj.at("seed").get<uint64_t>();
  man.realized_missing_rate = mj.at("realized_missing_rate").get<double>();
  return man;
}

}  // namespace pmurec::datagen
