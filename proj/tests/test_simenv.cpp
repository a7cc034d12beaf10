#include "mansy/simenv.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <stdexcept>

using namespace mansy;

namespace {

VideoManifest nominal_manifest(const TileGrid& g, const BitrateLadder& ladder, int chunks) {
  VideoManifest m(g, ladder, chunks, 1.0);
  for (int c = 0; c < chunks; ++c)
    for (int t = 0; t < g.tile_count(); ++t)
      for (std::size_t r = 0; r < ladder.size(); ++r) m.set_bits(c, t, r, ladder.rungs[r] * 1e6 / g.tile_count());
  return m;
}

TileMask random_mask(const TileGrid& g, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.15);
  TileMask m(g);
  for (std::size_t t = 0; t < m.size(); ++t) m.set(t, coin(rng));
  if (m.empty()) m.set(std::uniform_int_distribution<std::size_t>(0, m.size() - 1)(rng));
  return m;
}

// Chebyshev distance to the nearest predicted tile, columns wrapping.
std::vector<int> brute_rings(const TileMask& m) {
  const TileGrid& g = m.grid();
  std::vector<int> out(m.size(), std::numeric_limits<int>::max());
  for (int a = 0; a < g.tile_count(); ++a)
    for (int b = 0; b < g.tile_count(); ++b) {
      if (!m[static_cast<std::size_t>(b)]) continue;
      const int dr = std::abs(a / g.cols - b / g.cols);
      const int raw = std::abs(a % g.cols - b % g.cols);
      const int dc = std::min(raw, g.cols - raw);
      out[static_cast<std::size_t>(a)] = std::min(out[static_cast<std::size_t>(a)], std::max(dr, dc));
    }
  return out;
}

// Nearest rung by explicit scan of distances, lower rung on ties.
double brute_snap(const std::vector<double>& rungs, double target) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < rungs.size(); ++i) {
    const double d = std::abs(rungs[i] - target), bd = std::abs(rungs[best] - target);
    if (d < bd) best = i;
  }
  return rungs[best];
}

const std::vector<double> kConstant10{10.0};

}  // namespace

TEST_CASE("action space sizes and ordering") {
  const auto a = action_space(BitrateLadder{});
  CHECK(a.size() == 15);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].r_in >= a[i].r_out);
    if (i > 0) {
      const bool ordered = a[i - 1].r_in < a[i].r_in || (a[i - 1].r_in == a[i].r_in && a[i - 1].r_out < a[i].r_out);
      CHECK(ordered);
    }
  }
  CHECK(action_space(BitrateLadder{{3.0}}).size() == 1);
}

TEST_CASE("ladder snapping ties go down") {
  const BitrateLadder l;
  CHECK(l.closest(4.0) == 5.0);
  CHECK(l.closest(3.0) == 1.0);  // equidistant from 1 and 5
  CHECK(l.closest(2.0) == 1.0);
  CHECK(l.closest(100.0) == 35.0);
}

TEST_CASE("pyramid assignment with a full mask keeps r_in everywhere") {
  const TileGrid g;
  const auto rates = pyramid_assign({16, 5}, TileMask(g, true), BitrateLadder{}, 2.0);
  for (double r : rates) CHECK(r == 16.0);
}

TEST_CASE("pyramid ring 2 target 8/2 snaps to 5") {
  const TileGrid g;
  TileMask m(g);
  m.set(27);
  const auto rates = pyramid_assign({16, 8}, m, BitrateLadder{}, 2.0);
  CHECK(rates[27] == 16.0);
  CHECK(rates[28] == 8.0);   // ring 1
  CHECK(rates[29] == 5.0);   // ring 2: 4 -> 5
  CHECK(rates[30] == 1.0);   // ring 3: 2 -> 1
}

TEST_CASE("pyramid matches the ring-construction oracle and is non-increasing outward") {
  const TileGrid g;
  const BitrateLadder ladder;
  std::mt19937_64 rng(42);
  for (const auto& a : action_space(ladder))
    for (double scale : {1.0, 2.0, 4.0})
      for (int trial = 0; trial < 5; ++trial) {
        const auto m = random_mask(g, rng);
        const auto rings = brute_rings(m);
        const auto rates = pyramid_assign(a, m, ladder, scale);
        CHECK(ring_index(m) == rings);
        for (std::size_t t = 0; t < rates.size(); ++t) {
          const int j = rings[t];
          const double expect =
              j == 0 ? a.r_in : std::max(brute_snap(ladder.rungs, a.r_out / std::pow(scale, j - 1)), ladder.min());
          CHECK(rates[t] == expect);
          for (std::size_t u = 0; u < rates.size(); ++u)
            if (rings[u] > j) CHECK(rates[u] <= rates[t]);
        }
      }
  CHECK_THROWS_AS(pyramid_assign({5, 1}, TileMask(g), ladder, 2.0), std::invalid_argument);
}

TEST_CASE("download time integrates the trace piecewise") {
  const TileGrid g{1, 1, 100, 100};
  VideoManifest m(g, BitrateLadder{{1.0}}, 1, 1.0);
  m.set_bits(0, 0, 0, 5e6);
  const std::vector<double> rate{1.0};
  CHECK(download_time(m, 0, rate, {1.0, kConstant10}, 0.0) == doctest::Approx(0.5));
  m.set_bits(0, 0, 0, 8e6);
  CHECK(download_time(m, 0, rate, {1.0, {4.0, 8.0}}, 0.0) == doctest::Approx(1.5));
  CHECK(transfer_time({1.0, {4.0, 8.0}}, 8e6, 0.5) == doctest::Approx(0.5 + 0.75));
  // cyclic replay: 2 s at 4 Mbps twice
  CHECK(transfer_time({1.0, {4.0}}, 12e6, 0.0) == doctest::Approx(3.0));
}

TEST_CASE("download time is linear in tile sizes on a constant trace") {
  const TileGrid g;
  const BitrateLadder ladder;
  const auto m = synthetic_manifest(g, ladder, 2, 1.0, 9);
  auto m2 = m;
  for (int t = 0; t < g.tile_count(); ++t)
    for (std::size_t r = 0; r < ladder.size(); ++r) m2.set_bits(1, t, r, 2 * m.bits(1, t, r));
  TileMask p(g);
  p.set(10);
  const auto rates = pyramid_assign({35, 8}, p, ladder, 2.0);
  const BandwidthTrace tr{1.0, {7.0}};
  CHECK(download_time(m2, 1, rates, tr, 0.3) == doctest::Approx(2 * download_time(m, 1, rates, tr, 0.3)));
}

TEST_CASE("synthetic manifest sizes follow the nominal model") {
  const TileGrid g;
  const BitrateLadder ladder;
  const auto m = synthetic_manifest(g, ladder, 3, 1.0, 1);
  CHECK_NOTHROW(m.validate());
  for (int c = 0; c < 3; ++c)
    for (int t = 0; t < g.tile_count(); ++t)
      for (std::size_t r = 0; r < ladder.size(); ++r) {
        const double nominal = ladder.rungs[r] * 1e6 / g.tile_count();
        CHECK(m.bits(c, t, r) >= std::floor(0.9 * nominal));
        CHECK(m.bits(c, t, r) <= std::ceil(1.1 * nominal));
      }
}

TEST_CASE("step applies the buffer update rule") {
  const TileGrid g{1, 1, 100, 100};
  VideoManifest m(g, BitrateLadder{{1.0}}, 3, 1.0);
  for (int c = 0; c < 3; ++c) m.set_bits(c, 0, 0, 2e6);
  const Simulator sim(m, {1.0, {1.0}});
  TileMask full(g, true);
  auto s = sim.start();
  s.buffer = 0.5;
  const auto rec = sim.step(s, {1, 1}, full, full, {1, 0, 0});
  CHECK(rec.download_time == doctest::Approx(2.0));
  CHECK(rec.qoe.q3 == doctest::Approx(1.5));
  CHECK(s.buffer == doctest::Approx(1.0));
  CHECK(rec.throughput == doctest::Approx(1.0));
}

TEST_CASE("with unlimited bandwidth the buffer fills to the cap without stalls") {
  const TileGrid g;
  const auto m = synthetic_manifest(g, BitrateLadder{}, 8, 1.0, 2);
  const Simulator sim(m, {1.0, {1e12}});
  TileMask p(g);
  p.set(0);
  auto s = sim.start();
  double expected = 0.0;
  while (!sim.finished(s)) {
    const auto rec = sim.step(s, {35, 35}, p, p, {});
    expected = std::min(expected + 1.0, 4.0);
    CHECK(rec.qoe.q3 == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(s.buffer == doctest::Approx(expected).epsilon(1e-6));
  }
  CHECK_THROWS_AS(sim.step(s, {35, 35}, p, p, {}), std::logic_error);
}

TEST_CASE("episodes replay identically and histories keep length k") {
  const TileGrid g;
  const auto m = synthetic_manifest(g, BitrateLadder{}, 20, 1.0, 3);
  const Simulator sim(m, {0.5, {2, 6, 1, 9, 3}});
  std::mt19937_64 rng(4);
  std::vector<TileMask> pred, act;
  for (int c = 0; c < 20; ++c) {
    pred.push_back(random_mask(g, rng));
    act.push_back(random_mask(g, rng));
  }
  const auto actions = action_space(m.ladder());
  auto run = [&] {
    auto s = sim.start(1.3);
    std::vector<StepRecord> recs;
    for (int c = 0; c < 20; ++c) {
      const double prev_n = s.n.back();
      recs.push_back(sim.step(s, actions[static_cast<std::size_t>(c) % actions.size()], pred[c], act[c], {}));
      CHECK(s.n.size() == 8);
      CHECK(s.g.size() == 8);
      CHECK(s.q3.size() == 8);
      CHECK(s.n[6] == prev_n);
      CHECK(s.n.back() == recs.back().throughput);
      CHECK(s.buffer >= 0.0);
    }
    return std::make_pair(s, episode_log_csv(recs));
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("total rebuffering matches a fine-grained playback replay") {
  const TileGrid g;
  const auto m = synthetic_manifest(g, BitrateLadder{}, 30, 1.0, 5);
  const Simulator sim(m, {1.0, {3, 1, 12, 0.5, 6, 20, 2}});
  std::mt19937_64 rng(6);
  auto s = sim.start();
  std::vector<StepRecord> recs;
  const auto actions = action_space(m.ladder());
  std::uniform_int_distribution<std::size_t> pick(0, actions.size() - 1);
  while (!sim.finished(s)) {
    const auto mask = random_mask(g, rng);
    recs.push_back(sim.step(s, actions[pick(rng)], mask, mask, {}));
  }
  double q3_sum = 0.0;
  for (const auto& r : recs) q3_sum += r.qoe.q3;

  // Replay: the player drains buffered media at 1 s/s and stalls when empty.
  const double dt = 1e-4;
  double buffer = 0.0, stall = 0.0, t = recs.front().request_time - recs.front().wait;
  for (const auto& r : recs) {
    const double arrival = r.request_time + r.download_time;
    for (; t < arrival - dt / 2; t += dt) {
      if (buffer > dt / 2)
        buffer -= dt;
      else if (t >= r.request_time)
        stall += dt;
      else
        buffer = 0.0;
    }
    buffer = std::max(buffer, 0.0) + 1.0;
  }
  CHECK(q3_sum > 1.0);
  CHECK(stall == doctest::Approx(q3_sum).epsilon(2e-3));
}

TEST_CASE("heuristic policy picks the highest feasible pair") {
  const TileGrid g{2, 2, 200, 200};
  const BitrateLadder ladder;
  const Simulator sim(nominal_manifest(g, ladder, 2), {1.0, {1.0}});
  const auto s = sim.start();
  TileMask p(g);
  p.set(0);
  CHECK(heuristic_policy(sim, s, p, 0.0) == BitrateAction{1, 1});
  CHECK(heuristic_policy(sim, s, p, std::numeric_limits<double>::infinity()) == BitrateAction{35, 35});
  // chunk bits = (r_in + 3 r_out) / 4 Mbit
  CHECK(heuristic_policy(sim, s, p, 10.0) == BitrateAction{35, 1});
  CHECK(heuristic_policy(sim, s, p, 5.0) == BitrateAction{16, 1});
  CHECK(heuristic_policy(sim, s, p, 15.0) == BitrateAction{35, 8});  // 35 + 24 <= 60
}

TEST_CASE("harmonic mean ignores empty slots") {
  CHECK(harmonic_mean(std::vector<double>{0, 0, 2, 6}) == doctest::Approx(3.0));
  CHECK(harmonic_mean(std::vector<double>{0, 0}) == 0.0);
}

TEST_CASE("manifest and bandwidth csv round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "mansy_simenv_rt";
  const TileGrid g{2, 4, 400, 200};
  const BitrateLadder ladder;
  const auto m = synthetic_manifest(g, ladder, 3, 1.0, 8);
  save_manifest(dir / "m.csv", m);
  const auto back = load_manifest(dir / "m.csv", g, ladder, 1.0);
  for (int c = 0; c < 3; ++c)
    for (int t = 0; t < g.tile_count(); ++t)
      for (std::size_t r = 0; r < ladder.size(); ++r) CHECK(back.bits(c, t, r) == m.bits(c, t, r));
  const BandwidthTrace tr{0.5, {1.25, 3.5, 0.75}};
  save_bandwidth(dir / "b.csv", tr);
  const auto tb = load_bandwidth(dir / "b.csv");
  CHECK(tb.interval == tr.interval);
  CHECK(tb.mbps == tr.mbps);
  std::filesystem::remove_all(dir);
}
