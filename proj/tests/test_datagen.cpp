// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <numbers>

#include "pmurec/datagen.hpp"
#include "pmurec/numeric.hpp"
#include "test_support.hpp"

using namespace pmurec;
using namespace pmurec::datagen;

namespace {

grid::GridGraph fixture_grid() {
  return grid::load_grid(testsup::data_path("grids/case39.json"));
}

}  // namespace

TEST_CASE("modal config: validation") {
  ModalConfig cfg;
  cfg.n_modes = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = ModalConfig{};
  cfg.window_len = 1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = ModalConfig{};
  cfg.freq_max = 30.0;  // beyond Nyquist at 50 Hz
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("generate: noise-free windows have rank <= n_modes + 1") {
  const auto g = fixture_grid();
  ModalConfig cfg;
  cfg.n_modes = 3;
  cfg.noise_sigma = 0.0;
  const auto windows = generate_windows(g, cfg, 12, 99);
  for (const auto& w : windows)
    for (int ch = 0; ch < 2; ++ch) {
      const auto dec = num::svd(w.x_true[static_cast<size_t>(ch)]);
      const double thresh = 1e-8 * dec.s(0);
      int rank = 0;
      for (Eigen::Index i = 0; i < dec.s.size(); ++i)
        if (dec.s(i) > thresh) ++rank;
      CHECK(rank <= cfg.n_modes + 1);
    }
}

TEST_CASE("generate: deterministic and within physical ranges") {
  const auto g = fixture_grid();
  ModalConfig cfg;
  const auto w1 = generate_windows(g, cfg, 8, 1234);
  const auto w2 = generate_windows(g, cfg, 8, 1234);
  REQUIRE(w1.size() == w2.size());
  for (size_t i = 0; i < w1.size(); ++i) {
    CHECK(testsup::bit_equal(w1[i].x_true[0], w2[i].x_true[0]));
    CHECK(testsup::bit_equal(w1[i].x_true[1], w2[i].x_true[1]));
    CHECK(w1[i].x_true[0].minCoeff() >= 0.85);
    CHECK(w1[i].x_true[0].maxCoeff() <= 1.15);
    CHECK(w1[i].x_true[1].minCoeff() > -std::numbers::pi);
    CHECK(w1[i].x_true[1].maxCoeff() <= std::numbers::pi);
  }
  const auto w3 = generate_windows(g, cfg, 8, 1235);
  CHECK_FALSE(testsup::bit_equal(w1[0].x_true[0], w3[0].x_true[0]));
}

TEST_CASE("inject: empty schedule keeps everything observed") {
  const auto g = fixture_grid();
  auto windows = generate_windows(g, ModalConfig{}, 4, 5);
  MissingSchedule sched;  // random_rate 0, no events
  const double realized = inject_missing(windows, sched);
  CHECK(realized == 0.0);
  for (const auto& w : windows) {
    CHECK(w.mask.minCoeff() == 1.0);
    CHECK(testsup::bit_equal(w.x_obs[0], w.x_true[0]));
    CHECK(testsup::bit_equal(w.x_obs[1], w.x_true[1]));
  }
}

TEST_CASE("inject: block event zeroes its node columns") {
  const auto g = fixture_grid();
  auto windows = generate_windows(g, ModalConfig{}, 3, 6);
  const long total = 3 * windows[0].steps();
  MissingSchedule sched;
  sched.events.push_back({MissPattern::BlockWise, {0, 1}, 0, total});
  inject_missing(windows, sched);
  for (const auto& w : windows) {
    CHECK(w.mask.col(0).maxCoeff() == 0.0);
    CHECK(w.mask.col(1).maxCoeff() == 0.0);
    CHECK(w.mask.col(2).minCoeff() == 1.0);
    for (int t = 0; t < w.steps(); ++t)
      CHECK(w.labels(t, 0) == static_cast<uint8_t>(MissPattern::BlockWise));
  }
}

TEST_CASE("inject: mask/observation consistency is exact") {
  const auto g = fixture_grid();
  auto windows = generate_windows(g, ModalConfig{}, 20, 8);
  const auto sched = make_default_schedule(20, 8, g.pmu_count(), 0.3, 0.6, 30, 17);
  inject_missing(windows, sched);
  for (const auto& w : windows)
    for (int ch = 0; ch < 2; ++ch)
      CHECK(testsup::bit_equal(
          w.x_obs[static_cast<size_t>(ch)],
          w.mask.cwiseProduct(w.x_true[static_cast<size_t>(ch)]).eval()));
}

TEST_CASE("inject: event span outside the stream rejected") {
  const auto g = fixture_grid();
  auto windows = generate_windows(g, ModalConfig{}, 2, 9);
  MissingSchedule sched;
  sched.events.push_back({MissPattern::BlockWise, {0}, 0, 1000});
  CHECK_THROWS_AS(inject_missing(windows, sched), ValidationError);
  sched.events.clear();
  sched.events.push_back({MissPattern::BlockWise, {99}, 0, 4});
  CHECK_THROWS_AS(inject_missing(windows, sched), ValidationError);
}

TEST_CASE("default schedule: realized rate within two points of target") {
  const auto g = fixture_grid();
  const int n_windows = 120;  // >= 100-window contract
  auto windows = generate_windows(g, ModalConfig{}, n_windows, 21);
  const auto sched =
      make_default_schedule(n_windows, 8, g.pmu_count(), 0.30, 0.60, 30, 22);
  const double realized = inject_missing(windows, sched);
  CHECK(realized == doctest::Approx(0.60).epsilon(0.034));  // +-2 points

  // the block events run 30 consecutive steps over more than half the PMUs
  bool saw_block = false;
  for (const auto& ev : sched.events) {
    if (ev.pattern != MissPattern::BlockWise) continue;
    saw_block = true;
    CHECK(ev.t_end - ev.t_begin == 30);
    CHECK(static_cast<int>(ev.nodes.size()) > g.pmu_count() / 2);
  }
  CHECK(saw_block);

  // all four patterns appear in the labels
  std::array<long, 5> counts{};
  for (const auto& w : windows)
    for (int t = 0; t < w.steps(); ++t)
      for (int i = 0; i < w.nodes(); ++i) counts[w.labels(t, i)] += 1;
  CHECK(counts[1] > 0);
  CHECK(counts[2] > 0);
  CHECK(counts[3] > 0);
  CHECK(counts[4] > 0);
}

TEST_CASE("split: exact quotas and determinism") {
  const auto g = fixture_grid();
  auto windows = generate_windows(g, ModalConfig{}, 10, 33);
  const auto dir = std::filesystem::temp_directory_path() / "pmurec_split_test";
  std::filesystem::remove_all(dir);
  const auto man = split_and_store(windows, {0.7, 0.2, 0.1}, dir, 33);
  CHECK(man.counts.train == 7);
  CHECK(man.counts.test == 2);
  CHECK(man.counts.val == 1);

  const auto man2 = split_and_store(windows, {0.7, 0.2, 0.1}, dir, 33);
  CHECK(man2.counts.train == 7);

  const auto all_train = split_and_store(windows, {1.0, 0.0, 0.0}, dir, 33);
  CHECK(all_train.counts.train == 10);
  CHECK(all_train.counts.test == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("split: bad ratios rejected") {
  const auto g = fixture_grid();
  auto windows = generate_windows(g, ModalConfig{}, 4, 3);
  CHECK_THROWS_AS(split_indices(windows, {0.5, 0.2, 0.1}), ValidationError);
}

TEST_CASE("store: bit-exact round trip through JSON lines") {
  const auto g = fixture_grid();
  auto windows = generate_windows(g, ModalConfig{}, 6, 55);
  const auto sched = make_default_schedule(6, 8, g.pmu_count(), 0.3, 0.6, 10, 56);
  inject_missing(windows, sched);
  const auto dir = std::filesystem::temp_directory_path() / "pmurec_store_test";
  std::filesystem::remove_all(dir);
  split_and_store(windows, {1.0, 0.0, 0.0}, dir, 55);

  const auto loaded = load_split(dir, "train");
  REQUIRE(loaded.size() == windows.size());
  // split ordering is id-hash based; match back by id
  for (const auto& l : loaded) {
    const auto& orig = *std::find_if(windows.begin(), windows.end(),
                                     [&](const auto& w) { return w.id == l.id; });
    CHECK(testsup::bit_equal(l.x_true[0], orig.x_true[0]));
    CHECK(testsup::bit_equal(l.x_true[1], orig.x_true[1]));
    CHECK(testsup::bit_equal(l.x_obs[0], orig.x_obs[0]));
    CHECK(testsup::bit_equal(l.mask, orig.mask));
    CHECK((l.labels == orig.labels));
  }
  const auto man = read_manifest(dir);
  CHECK(man.counts.train == 6);
  std::filesystem::remove_all(dir);
}
