// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset. Exit status is non-zero when any selected
// criterion fails.

#include "gradcheck.hpp"
#include "mansy/agent.hpp"
#include "mansy/identifier.hpp"
#include "mansy/orchestrator.hpp"
#include "mansy/qoe.hpp"
#include "mansy/simenv.hpp"
#include "mansy/traces.hpp"
#include "mansy/vp_model.hpp"
#include "mansy/vp_train.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#ifndef MANSY_CLI_PATH
#define MANSY_CLI_PATH "mansy"
#endif

using namespace mansy;
using namespace mansy::rl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

// ---------------------------------------------------------------- 1

double oracle_axis(double a, double b, double period) {
  double best = INFINITY;
  for (int k = -2; k <= 2; ++k) best = std::min(best, std::abs(a - b + k * period));
  return best;
}

std::vector<bool> oracle_mask(const ViewportPoint& c, const FieldOfView& fov, const TileGrid& g) {
  const double w = fov.width_fraction * g.video_width, h = fov.height_fraction * g.video_height;
  const double left = c.x - w / 2.0;
  double top = c.y - h / 2.0;
  if (top < 0.0) top = 0.0;
  if (top + h > g.video_height) top = g.video_height - h;
  std::vector<bool> m(static_cast<std::size_t>(g.tile_count()), false);
  for (int r = 0; r < g.rows; ++r)
    for (int col = 0; col < g.cols; ++col) {
      const double tx = (col + 0.5) * g.video_width / g.cols, ty = (r + 0.5) * g.video_height / g.rows;
      bool inside_x = false;
      for (int k = -1; k <= 1; ++k) {
        const double x = tx + k * g.video_width;
        inside_x = inside_x || (x >= left && x <= left + w);
      }
      if (inside_x && ty >= top && ty <= top + h) m[static_cast<std::size_t>(r * g.cols + col)] = true;
    }
  const int cr = std::min(g.rows - 1, static_cast<int>(c.y / (g.video_height / g.rows)));
  const int cc = std::min(g.cols - 1, static_cast<int>(c.x / (g.video_width / g.cols)));
  m[static_cast<std::size_t>(cr * g.cols + cc)] = true;
  return m;
}

Outcome geometry_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<int> dims(1, 12);
  std::uniform_real_distribution<double> size(50.0, 4000.0), frac(0.05, 0.95), unit(0.0, 1.0);
  double worst_distance = 0.0, worst_iou = 0.0;
  int mask_mismatch = 0;
  const int cases = 10000;
  for (int i = 0; i < cases; ++i) {
    const TileGrid g{dims(rng), dims(rng), size(rng), size(rng)};
    const FieldOfView fov{frac(rng), frac(rng)};
    const ViewportPoint a{unit(rng) * g.video_width, unit(rng) * g.video_height};
    const ViewportPoint b{unit(rng) * g.video_width, unit(rng) * g.video_height};

    const double dx = oracle_axis(a.x, b.x, g.video_width), dy = oracle_axis(a.y, b.y, g.video_height);
    worst_distance = std::max(worst_distance, std::abs(wrap_distance(a, b, g) - (dx * dx + dy * dy) / 2.0));

    const auto ma = viewport_tile_mask(a, fov, g), mb = viewport_tile_mask(b, fov, g);
    const auto oa = oracle_mask(a, fov, g), ob = oracle_mask(b, fov, g);
    for (std::size_t t = 0; t < oa.size(); ++t) mask_mismatch += (ma[t] != oa[t]) + (mb[t] != ob[t]);

    std::set<std::size_t> sa, sb, su, si;
    for (std::size_t t = 0; t < oa.size(); ++t) {
      if (oa[t]) sa.insert(t);
      if (ob[t]) sb.insert(t);
    }
    std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(su, su.end()));
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(si, si.end()));
    const double expected = su.empty() ? 1.0 : static_cast<double>(si.size()) / static_cast<double>(su.size());
    worst_iou = std::max(worst_iou, std::abs(iou(ma, mb) - expected));
  }
  const double secs = seconds_since(t0);
  return {worst_distance < 1e-9 && worst_iou < 1e-9 && mask_mismatch == 0 && secs < 10.0,
          fmt("%d cases, max |distance err| %.2e, max |iou err| %.2e, mask mismatches %d, %.2fs", cases,
              worst_distance, worst_iou, mask_mismatch, secs)};
}

// ---------------------------------------------------------------- 2

using MatD = ad::Matrix<double>;

MatD random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Outcome gradient_fidelity() {
  std::vector<std::pair<std::string, double>> errors;

  {
    ParameterStore<double> s;
    s.add("a.wq", random_matrix(4, 2 * 3, 9));
    s.add("a.wk", random_matrix(4, 2 * 3, 10));
    s.add("a.wv", random_matrix(4, 2 * 2, 11));
    s.add("a.wo", random_matrix(2 * 2, 4, 12));
    const MatD xq = random_matrix(2 * 3, 4, 13), xkv = random_matrix(2 * 4, 4, 14), w = random_matrix(2 * 3, 4, 15);
    const auto r = testing::gradient_check(s, [&](ad::Tape<double>& t) {
      Binder<double> p(t, s);
      const auto kv = t.constant(xkv);
      const auto y = vp::multi_head_attention(p, "a", t.constant(xq), kv, kv, 2, 3, 4);
      return ad::sum(ad::mul(ad::tanh(y), t.constant(w)));
    });
    errors.emplace_back("attention", r.max_relative_error);
  }
  {
    ParameterStore<double> s;
    s.add("d.w", random_matrix(9, 3, 17));
    s.add("d.b", random_matrix(1, 3, 18));
    const MatD x = random_matrix(2 * 6, 3, 19), w = random_matrix(2 * 3, 3, 20);
    const auto r = testing::gradient_check(s, [&](ad::Tape<double>& t) {
      Binder<double> p(t, s);
      return ad::sum(ad::mul(vp::distill(p, "d", t.constant(x), 6), t.constant(w)));
    });
    errors.emplace_back("distill", r.max_relative_error);
  }

  AgentConfig ac;
  ac.state_inputs = {4, 2, 1};
  ac.actions = 5;
  ac.feature_width = 6;
  ac.hidden_width = 10;
  PolicyNetwork<double> net(ac, 6);
  testing::jitter_biases(net.parameters());
  const MatD obs = random_matrix(5, ac.observation_width(), 21);
  const MatD mix = random_matrix(5, ac.actions, 22);
  {
    const auto r = testing::gradient_check(net.parameters(), [&](ad::Tape<double>& t) {
      const Binder<double> p(t, net.parameters());
      return ad::sum(ad::mul(ad::log_softmax_rows(net.forward(p, t.constant(obs)).logits), t.constant(mix)));
    });
    errors.emplace_back("policy", r.max_relative_error);
  }
  {
    const MatD target = random_matrix(5, 1, 23);
    const auto r = testing::gradient_check(net.parameters(), [&](ad::Tape<double>& t) {
      const Binder<double> p(t, net.parameters());
      return ad::sum(ad::square(ad::sub(net.forward(p, t.constant(obs)).value, t.constant(target))));
    });
    errors.emplace_back("value", r.max_relative_error);
  }
  {
    IdentifierConfig ic;
    ic.state_inputs = {4, 2, 1};
    ic.actions = 5;
    ic.feature_width = 6;
    ic.hidden_width = 10;
    Identifier<double> id(ic, 4);
    testing::jitter_biases(id.parameters());
    const MatD states = random_matrix(6, ic.state_width(), 24);
    const std::vector<int> actions{0, 1, 2, 3, 4, 2};
    const MatD target = random_matrix(6, 3, 25).cwiseAbs();
    const auto r = testing::gradient_check(id.parameters(), [&](ad::Tape<double>& t) {
      const Binder<double> p(t, id.parameters());
      return mean_squared_error(id.forward(p, t.constant(states), actions), target);
    });
    errors.emplace_back("identifier", r.max_relative_error);
  }

  bool pass = true;
  std::string detail;
  for (const auto& [name, e] : errors) {
    pass = pass && e < 1e-4;
    detail += fmt("%s %.1e  ", name.c_str(), e);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------- 3

Outcome mtio_overhead() {
  vp::PredictorConfig c;
  c.embed_dim = 512;
  c.attention_heads = 8;
  c.key_dim = 64;
  c.value_dim = 64;
  c.blocks = 2;
  c.io_heads = 1;
  const auto base = vp::count_params_flops(c);
  bool monotone = true;
  double prev_p = -1.0, prev_f = -1.0, p3 = 0.0, f3 = 0.0;
  for (int m : {1, 3, 5, 10}) {
    c.io_heads = m;
    const auto cost = vp::count_params_flops(c);
    const double dp = (static_cast<double>(cost.parameters) - static_cast<double>(base.parameters)) /
                      static_cast<double>(base.parameters);
    const double df = (cost.flops - base.flops) / base.flops;
    if (m > 1) monotone = monotone && dp > prev_p && df > prev_f;
    if (m == 3) p3 = dp, f3 = df;
    prev_p = dp;
    prev_f = df;
  }
  return {p3 < 0.01 && f3 < 0.01 && p3 > 0.0 && monotone,
          fmt("M=3 vs M=1: params +%.3f%%, flops +%.3f%%; monotone %s", 100 * p3, 100 * f3,
              monotone ? "yes" : "no")};
}

// ---------------------------------------------------------------- 4

Outcome ensemble_calibration() {
  const TileGrid frame{8, 8, 1920, 960};
  vp::PredictorConfig c;
  c.io_heads = 3;
  c.embed_dim = 16;
  c.attention_heads = 2;
  c.key_dim = 8;
  c.value_dim = 8;
  c.blocks = 1;
  c.ffn_width = 32;
  c.history_len = 5;
  c.horizon_len = 5;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> ux(0.3 * frame.video_width, 0.7 * frame.video_width),
      uy(0.3 * frame.video_height, 0.7 * frame.video_height);
  std::normal_distribution<double> step(0.0, 20.0);
  const int wanted = 1000, max_attempts = 100000, batch_size = 2, models = 20;
  std::vector<std::unique_ptr<vp::MtioTransformer<float>>> pool;
  for (int m = 0; m < models; ++m) pool.push_back(std::make_unique<vp::MtioTransformer<float>>(c, frame, 500 + m));

  int used = 0, skipped = 0, violations = 0, disagree = 0, strict = 0;
  double worst_excess = -INFINITY;
  for (int b = 0; b < max_attempts && used < wanted; ++b) {
    const auto& model = *pool[static_cast<std::size_t>(b % models)];
    std::vector<Trajectory> histories;
    std::vector<Trajectory> truths;
    for (int i = 0; i < batch_size; ++i)
      for (int h = 0; h < c.io_heads; ++h) {
        Trajectory t{{}, 0.2};
        ViewportPoint p{ux(rng), uy(rng)};
        for (int s = 0; s < c.history_len; ++s) {
          t.points.push_back(p);
          p.x = std::clamp(p.x + step(rng), 0.0, frame.video_width - 1);
          p.y = std::clamp(p.y + step(rng), 0.0, frame.video_height - 1);
        }
        histories.push_back(t);
        if (h == 0) {
          Trajectory f{{}, 0.2};
          for (int s = 0; s < c.horizon_len; ++s) f.points.push_back({ux(rng), uy(rng)});
          truths.push_back(f);
        }
      }
    std::vector<std::vector<const Trajectory*>> batch(batch_size);
    for (int i = 0; i < batch_size; ++i)
      for (int h = 0; h < c.io_heads; ++h)
        batch[static_cast<std::size_t>(i)].push_back(&histories[static_cast<std::size_t>(i * c.io_heads + h)]);
    const auto preds = model.predict_batch(batch);

    bool wraps = false, heads_differ = false;
    double ens = 0.0, heads = 0.0;
    for (int i = 0; i < batch_size; ++i) {
      const auto& pred = preds[static_cast<std::size_t>(i)];
      const auto e = vp::ensemble(pred, frame);
      for (int s = 0; s < c.horizon_len; ++s) {
        const auto& truth = truths[static_cast<std::size_t>(i)].points[static_cast<std::size_t>(s)];
        std::vector<ViewportPoint> pts{truth};
        for (const auto& tr : pred.trajectories) pts.push_back(tr.points[static_cast<std::size_t>(s)]);
        for (std::size_t u = 0; u < pts.size(); ++u)
          for (std::size_t v = u + 1; v < pts.size(); ++v) {
            wraps = wraps || std::abs(pts[u].x - pts[v].x) >= frame.video_width / 2 ||
                    std::abs(pts[u].y - pts[v].y) >= frame.video_height / 2;
            if (u > 0) heads_differ = heads_differ || !(pts[u] == pts[v]);
          }
        ens += wrap_distance(e.points[static_cast<std::size_t>(s)], truth, frame);
        for (const auto& tr : pred.trajectories)
          heads += wrap_distance(tr.points[static_cast<std::size_t>(s)], truth, frame) /
                   static_cast<double>(pred.trajectories.size());
      }
    }
    if (wraps) {
      ++skipped;
      continue;
    }
    ++used;
    worst_excess = std::max(worst_excess, ens - heads);
    if (ens > heads + 1e-9) ++violations;
    if (heads_differ) {
      ++disagree;
      if (ens < heads) ++strict;
    }
  }
  const double strict_share = disagree ? static_cast<double>(strict) / disagree : 0.0;
  return {used == wanted && violations == 0 && disagree > 0 && strict_share >= 0.95,
          fmt("%d batches used (%d skipped as wrapping), violations %d, worst ens-mean %.3g, strict on %d/%d (%.1f%%)",
              used, skipped, violations, worst_excess, strict, disagree, 100.0 * strict_share)};
}

// ---------------------------------------------------------------- 5

std::vector<Trajectory> trajectories_of(const std::vector<ViewportTrace>& traces) {
  std::vector<Trajectory> out;
  for (const auto& t : traces) out.push_back(t.trajectory);
  return out;
}

Outcome viewport_training() {
  const auto t0 = std::chrono::steady_clock::now();
  const TileGrid frame;
  const FieldOfView fov;
  const auto make = [&](const PatternFamily& family, int users, std::uint64_t seed) {
    return vp::make_windows(trajectories_of(gen_viewport_traces(family, users, 60.0, 5.0, frame, seed)), family.name,
                            5, 5, 5);
  };
  const auto train = make(PatternFamily::focus(), 48, 1);
  const auto validation = make(PatternFamily::focus(), 8, 4);
  const auto test = make(PatternFamily::focus(), 16, 2);
  const auto unseen = make(PatternFamily::explore(), 16, 3);

  vp::PredictorConfig c;
  c.io_heads = 3;
  c.embed_dim = 64;
  c.blocks = 1;
  c.attention_heads = 4;
  c.key_dim = 16;
  c.value_dim = 16;
  c.ffn_width = 256;
  std::vector<double> ens, best_head, explore;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    vp::TrainOptions o;
    o.epochs = 40;
    o.learning_rate = 1e-4;
    o.patience = 10;
    o.seed = seed;
    const auto r = vp::train(train, c, frame, o, &validation);
    const auto a = vp::evaluate_accuracy(vp::forecaster(r.model), test, fov, frame);
    const auto b = vp::evaluate_accuracy(vp::forecaster(r.model), unseen, fov, frame);
    ens.push_back(a.ensemble_mean());
    double best = 0.0;
    for (std::size_t h = 0; h < a.heads.size(); ++h) best = std::max(best, a.head_mean(h));
    best_head.push_back(best);
    explore.push_back(b.ensemble_mean());
    std::printf("    seed %llu: focus ensemble %.3f, best head %.3f, explore ensemble %.3f, epochs %zu\n",
                static_cast<unsigned long long>(seed), ens.back(), best, explore.back(), r.train_loss.size());
    std::fflush(stdout);
  }
  const double me = median(ens), mb = median(best_head), mx = median(explore), secs = seconds_since(t0);
  return {me >= 0.6 && me >= mb - 0.02 && secs < 900.0,
          fmt("median focus IoU %.3f, median best head %.3f, unseen explore %.3f (gap %.3f), %.0fs", me, mb, mx,
              me - mx, secs)};
}

// ---------------------------------------------------------------- 6

Outcome qoe_oracle() {
  // Four tiles in one row. Tile 0 is predicted; tiles 1 and 3 form the first
  // ring (wrap), tile 2 the second. Tile sizes are nominal: rung * 1e6 / 4 bits.
  const TileGrid grid{1, 4, 400, 100};
  const BitrateLadder ladder;
  VideoManifest manifest(grid, ladder, 3, 1.0);
  for (int c = 0; c < 3; ++c)
    for (int t = 0; t < 4; ++t)
      for (std::size_t r = 0; r < ladder.size(); ++r) manifest.set_bits(c, t, r, ladder.rungs[r] * 1e6 / 4.0);
  const BandwidthTrace trace{1.0, std::vector<double>(60, 10.0)};
  const Simulator sim(manifest, trace);
  const QoEPreference pref{0.5, 0.25, 0.25};

  TileMask predicted(grid);
  predicted.set(0);
  TileMask a0(grid), a1(grid), a2(grid);
  a0.set(0), a0.set(1), a1.set(0), a2.set(1), a2.set(2);
  const std::array<BitrateAction, 3> actions{{{16, 8}, {35, 1}, {5, 5}}};
  const std::array<TileMask, 3> actual{a0, a1, a2};

  // Tile rates per chunk: (16, 8, 5, 8), (35, 1, 1, 1), (5, 5, 1, 5).
  // Download = bits / 10 Mbps: 0.925, 0.95, 0.4 s. Buffer at request 0, 1, 1.05.
  const std::array<std::array<double, 4>, 3> expected{{
      {12.0, 16.0, 0.925, 0.5 * 12.0 - 0.25 * 16.0 - 0.25 * 0.925},
      {35.0, 23.0, 0.0, 0.5 * 35.0 - 0.25 * 23.0},
      {3.0, 34.0, 0.0, 0.5 * 3.0 - 0.25 * 34.0},
  }};
  const std::array<double, 3> buffers{0.0, 1.0, 1.05};

  auto s = sim.start(0.0);
  double worst = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto rec = sim.step(s, actions[c], predicted, actual[c], pref);
    const std::array<double, 4> got{rec.qoe.q1, rec.qoe.q2, rec.qoe.q3, rec.qoe.total};
    for (std::size_t k = 0; k < 4; ++k) worst = std::max(worst, std::abs(got[k] - expected[c][k]));
    worst = std::max(worst, std::abs(rec.buffer_before - buffers[c]));
  }
  const double stall = rebuffer_time(2.0, 0.5);
  worst = std::max(worst, std::abs(stall - 1.5));
  return {worst < 1e-9, fmt("3 chunks, max |err| %.2e; stall(l=2, b=0.5) = %.3f", worst, stall)};
}

// ---------------------------------------------------------------- 7

std::vector<double> oracle_pyramid(const BitrateAction& a, const TileMask& predicted, const BitrateLadder& ladder,
                                   double scale) {
  const TileGrid& g = predicted.grid();
  const auto snap = [&](double target) {
    double best = ladder.rungs.front();
    for (double r : ladder.rungs)
      if (std::abs(r - target) < std::abs(best - target)) best = r;
    return best;
  };
  // Ring of a tile = Chebyshev distance to the nearest predicted tile, columns
  // measured around the seam.
  std::vector<double> out(static_cast<std::size_t>(g.tile_count()));
  for (int t = 0; t < g.tile_count(); ++t) {
    int ring = 1 << 20;
    for (int u = 0; u < g.tile_count(); ++u) {
      if (!predicted[static_cast<std::size_t>(u)]) continue;
      const int dr = std::abs(t / g.cols - u / g.cols);
      const int dc0 = std::abs(t % g.cols - u % g.cols);
      ring = std::min(ring, std::max(dr, std::min(dc0, g.cols - dc0)));
    }
    out[static_cast<std::size_t>(t)] = ring == 0 ? a.r_in : snap(a.r_out / std::pow(scale, ring - 1));
  }
  return out;
}

Outcome pyramid_exactness() {
  const BitrateLadder ladder;
  const auto actions = action_space(ladder);
  const TileGrid grid{8, 8, 1920, 960};
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> ux(0, grid.video_width), uy(0, grid.video_height);
  std::vector<TileMask> masks;
  for (int i = 0; i < 5; ++i) masks.push_back(viewport_tile_mask({ux(rng), uy(rng)}, FieldOfView{}, grid));
  int checked = 0, mismatches = 0;
  for (const auto& a : actions)
    for (double scale : {1.5, 2.0, 3.0})
      for (const auto& m : masks) {
        ++checked;
        if (pyramid_assign(a, m, ladder, scale) != oracle_pyramid(a, m, ladder, scale)) ++mismatches;
      }
  // r_out 8 at scale 2: the second ring targets 4, which snaps to 5.
  TileMask one(grid);
  one.set(0);
  const auto snapped = pyramid_assign({16, 8}, one, ladder, 2.0);
  const double ring2 = snapped[2];
  return {actions.size() == 15 && mismatches == 0 && ring2 == 5.0,
          fmt("%zu actions, %d/%d assignments match, 8/2 -> %.0f", actions.size(), checked - mismatches, checked,
              ring2)};
}

// ---------------------------------------------------------------- 8

Outcome bandit_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  // Arm k pays the k-th QoE term, so the optimum for a preference is the arm
  // of its largest weight.
  BanditEnvironment bandit({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}, 8);
  const std::vector<QoEPreference> prefs{
      {7.0 / 9, 1.0 / 9, 1.0 / 9}, {1.0 / 9, 7.0 / 9, 1.0 / 9}, {1.0 / 9, 1.0 / 9, 7.0 / 9}};
  int solved = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainingConfig c;
    c.agent.state_inputs = {1};
    c.agent.actions = 3;
    c.agent.feature_width = 16;
    c.agent.hidden_width = 32;
    c.preference_batch = 3;
    c.episodes_per_preference = 4;
    c.ppo.minibatch = 16;
    c.ppo.learning_rate = 1e-3;
    c.ppo.entropy_coef = 0.02;
    c.identifier.minibatch = 16;
    c.alpha = 0.5;
    c.iterations = 100;
    c.seed = seed;
    const auto r = run_training(c, prefs, {&bandit});
    long steps = 0;
    for (const auto& d : r.diagnostics) steps += d.env_steps;
    double worst = 1.0;
    for (std::size_t i = 0; i < prefs.size(); ++i) {
      const auto w = prefs[i].as_array();
      worst = std::min(worst, r.agent.distribution({0.0, w[0], w[1], w[2]})[i]);
    }
    if (worst > 0.9 && steps <= 10000) ++solved;
    detail += fmt("seed %llu min p* %.3f (%ld steps); ", static_cast<unsigned long long>(seed), worst, steps);
  }
  const double secs = seconds_since(t0);
  return {solved >= 4 && secs < 300.0, fmt("%d/5 seeds solved, %.1fs: ", solved, secs) + detail};
}

// ---------------------------------------------------------------- 9, 10

struct World {
  std::vector<std::unique_ptr<StreamingEnvironment>> envs;

  std::vector<Environment*> pointers() const {
    std::vector<Environment*> out;
    for (const auto& e : envs) out.push_back(e.get());
    return out;
  }
};

constexpr int kChunks = 48;
constexpr double kLowMbps = 0.3, kHighMbps = 1.2;

World make_world(std::uint64_t seed, int count) {
  const TileGrid grid;
  const FieldOfView fov;
  const auto viewers = gen_viewport_traces(PatternFamily::focus(), count, kChunks + 1, 5.0, grid, seed);
  World w;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = seed * 100 + static_cast<std::uint64_t>(i);
    BandwidthProfile p{"bursty", kHighMbps, kLowMbps};
    p.switch_probability = 0.15;
    p.sigma = 0.35;
    const auto trace = gen_bandwidth_trace(p, 200.0, 1.0, s);
    const auto manifest = synthetic_manifest(grid, BitrateLadder{}, kChunks, 1.0, s);
    const auto masks = chunk_masks(viewers[static_cast<std::size_t>(i)].trajectory, 5, kChunks, 5,
                                   last_position_forecaster(5), fov, grid);
    w.envs.push_back(std::make_unique<StreamingEnvironment>("bw" + std::to_string(i), Simulator(manifest, trace), masks));
  }
  return w;
}

struct StreamingRun {
  std::vector<double> r_in, rebuffer;   // per train-pool preference
  double held_out_qoe = 0.0;
  // Identifier error on rollouts over the unseen traces against a constant
  // predictor at the pool mean. The identifier is trained and rewarded on
  // sampled actions; greedy and held-out-preference figures are reported only.
  double identifier_mse = 0.0, pool_mean_mse = 0.0;
  double greedy_identifier_mse = 0.0, greedy_pool_mean_mse = 0.0;
  double unseen_identifier_mse = 0.0, unseen_pool_mean_mse = 0.0;
  long steps = 0;
};

double constant_mse(const IdentifierSamples& samples, const std::vector<QoEPreference>& pool) {
  std::array<double, 3> mean{0, 0, 0};
  for (const auto& p : pool)
    for (int k = 0; k < 3; ++k) mean[static_cast<std::size_t>(k)] += p.as_array()[static_cast<std::size_t>(k)] / pool.size();
  double sum = 0.0;
  for (const auto& p : samples.prefs)
    for (std::size_t k = 0; k < 3; ++k) sum += (p.as_array()[k] - mean[k]) * (p.as_array()[k] - mean[k]);
  return sum / (3.0 * static_cast<double>(samples.size()));
}

StreamingRun streaming_run(double alpha, std::uint64_t seed) {
  const auto train = make_world(seed + 1, 8), test = make_world(seed + 1000, 6);
  const auto pool = preference_pool();
  TrainingConfig c;
  c.alpha = alpha;
  c.iterations = 1000;
  c.seed = seed;
  c.agent = AgentConfig::streaming(TileGrid{}.tile_count(), 5, SimConfig{}.history);
  c.agent.feature_width = 64;
  c.agent.hidden_width = 256;
  const auto result = run_training(c, pool.train, train.pointers());

  StreamingRun out;
  for (const auto& d : result.diagnostics) out.steps += d.env_steps;
  GreedyPolicy greedy(result.agent);
  const auto rows = run_evaluation(greedy, pool.train, test.pointers(), seed + 5);
  out.r_in.assign(pool.train.size(), 0.0);
  out.rebuffer.assign(pool.train.size(), 0.0);
  const double per = static_cast<double>(test.envs.size());
  for (const auto& r : rows) {
    out.r_in[r.preference_index] += r.r_in_mean / per;
    out.rebuffer[r.preference_index] += r.rebuffer_total / per;
  }
  const auto held = run_evaluation(greedy, pool.held_out, test.pointers(), seed + 5);
  for (const auto& r : held) out.held_out_qoe += r.qoe_mean / static_cast<double>(held.size());
  SampledPolicy sampled(result.agent, seed + 7);
  const auto samples = collect_samples(sampled, pool.train, test.pointers(), seed + 5);
  out.identifier_mse = identifier_mse(result.identifier, samples);
  out.pool_mean_mse = constant_mse(samples, pool.train);
  const auto greedy_samples = collect_samples(greedy, pool.train, test.pointers(), seed + 5);
  out.greedy_identifier_mse = identifier_mse(result.identifier, greedy_samples);
  out.greedy_pool_mean_mse = constant_mse(greedy_samples, pool.train);
  const auto unseen = collect_samples(greedy, pool.held_out, test.pointers(), seed + 5);
  out.unseen_identifier_mse = identifier_mse(result.identifier, unseen);
  out.unseen_pool_mean_mse = constant_mse(unseen, pool.held_out);
  return out;
}

struct StreamingRuns {
  std::vector<StreamingRun> repl, ablation;
  double seconds = 0.0;
};

const StreamingRuns& streaming_runs() {
  static const StreamingRuns runs = [] {
    const auto t0 = std::chrono::steady_clock::now();
    StreamingRuns r;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      r.repl.push_back(streaming_run(0.5, seed));
      r.ablation.push_back(streaming_run(0.0, seed));
      const auto& a = r.repl.back();
      const auto& b = r.ablation.back();
      std::printf("    seed %llu: r_in %.1f/%.1f/%.1f/%.1f, rebuffer %.1f/%.1f/%.1f/%.1f s, held-out QoE %.3f vs %.3f, "
                  "identifier MSE sampled %.4f greedy %.4f\n",
                  static_cast<unsigned long long>(seed), a.r_in[0], a.r_in[1], a.r_in[2], a.r_in[3], a.rebuffer[0],
                  a.rebuffer[1], a.rebuffer[2], a.rebuffer[3], a.held_out_qoe, b.held_out_qoe, a.identifier_mse,
                  a.greedy_identifier_mse);
      std::fflush(stdout);
    }
    r.seconds = seconds_since(t0);
    return r;
  }();
  return runs;
}

Outcome behavioral_differentiation() {
  const auto& runs = streaming_runs();
  std::vector<double> rin_gap, rebuffer_gap;
  long steps = 0;
  for (const auto& r : runs.repl) {
    rin_gap.push_back(r.r_in[0] - r.r_in[2]);
    rebuffer_gap.push_back(r.rebuffer[2] - r.rebuffer[0]);
    steps = std::max(steps, r.steps);
  }
  const double g = median(rin_gap), b = median(rebuffer_gap);
  return {g > 0.0 && b < 0.0 && steps <= 200000 && runs.seconds < 1800.0,
          fmt("median r_in(quality) - r_in(stall) = %.2f Mbps, median rebuffer(stall) - rebuffer(quality) = %.1f s, "
              "%ld steps per run, %.0fs for both criteria",
              g, b, steps, runs.seconds)};
}

Outcome repl_ablation() {
  const auto& runs = streaming_runs();
  std::vector<double> repl, ablation, mse, base, greedy, greedy_base, unseen, unseen_base;
  for (std::size_t i = 0; i < runs.repl.size(); ++i) {
    repl.push_back(runs.repl[i].held_out_qoe);
    ablation.push_back(runs.ablation[i].held_out_qoe);
    mse.push_back(runs.repl[i].identifier_mse);
    base.push_back(runs.repl[i].pool_mean_mse);
    greedy.push_back(runs.repl[i].greedy_identifier_mse);
    greedy_base.push_back(runs.repl[i].greedy_pool_mean_mse);
    unseen.push_back(runs.repl[i].unseen_identifier_mse);
    unseen_base.push_back(runs.repl[i].unseen_pool_mean_mse);
  }
  const double q1 = median(repl), q0 = median(ablation), m = median(mse), mb = median(base), g = median(greedy),
               gb = median(greedy_base), u = median(unseen), ub = median(unseen_base);
  return {q1 >= q0 && m < mb,
          fmt("median held-out QoE alpha=0.5 %.3f vs alpha=0 %.3f; identifier MSE on sampled rollouts over unseen "
              "traces %.4f vs pool mean %.4f (greedy rollouts %.4f vs %.4f; greedy on held-out preferences %.4f vs "
              "their pool mean %.4f)",
              q1, q0, m, mb, g, gb, u, ub)};
}

// ---------------------------------------------------------------- 11

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool run(const std::string& args) {
  const std::string cmd = std::string(MANSY_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str()) == 0;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / fmt("mansy-acceptance-%d", static_cast<int>(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root / "vp");
  fs::create_directories(root / "bw");
  fs::create_directories(root / "mf");
  const std::string r = root.string();
  {
    std::ofstream(root / "vp.cfg") << "embed_dim = 16\nattention_heads = 2\nkey_dim = 8\nvalue_dim = 8\nblocks = 1\n"
                                      "ffn_width = 32\nepochs = 3\nlearning_rate = 1e-3\n";
    std::ofstream(root / "abr.cfg") << "iterations = 3\nfeature_width = 16\nhidden_width = 32\nminibatch = 16\n";
  }
  bool ok = run("gen-traces viewport --family focus --users 6 --duration 30 --seed 1 --out " + r + "/vp/focus.csv") &&
            run("gen-traces bandwidth --profile bursty --level 1.2 --alt-level 0.3 --duration 120 --seed 2 --out " + r +
                "/bw/b0.csv") &&
            run("gen-traces manifest --chunks 12 --seed 3 --out " + r + "/mf/video0.csv");
  std::vector<std::string> files;
  for (const char* tag : {"a", "b"}) {
    const std::string out = r + "/" + tag;
    ok = ok && run("train-vp --config " + r + "/vp.cfg --traces " + r + "/vp --seed 5 --out " + out + "/vp.ckpt");
    ok = ok && run("train-abr --config " + r + "/abr.cfg --manifests " + r + "/mf --bandwidth " + r + "/bw --traces " +
                   r + "/vp --vp-ckpt " + out + "/vp.ckpt --seed 7 --out " + out + "/abr");
    ok = ok && run("eval-abr --ckpt " + out + "/abr --split unseen --report " + out + "/eval.csv --seed 9");
  }
  int identical = 0;
  const std::vector<std::string> reports{"vp.loss.csv", "abr/diagnostics.csv", "eval.csv"};
  std::string detail;
  for (const auto& f : reports) {
    const auto a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    const bool same = !a.empty() && a == b;
    identical += same;
    detail += f + (same ? " identical; " : " DIFFERS; ");
  }
  fs::remove_all(root);
  return {ok && identical == static_cast<int>(reports.size()), (ok ? "" : "a CLI run failed; ") + detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> check;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "geometry exactness", geometry_exactness},
      {2, "gradient fidelity", gradient_fidelity},
      {3, "MTIO overhead", mtio_overhead},
      {4, "ensemble calibration", ensemble_calibration},
      {5, "viewport training", viewport_training},
      {6, "QoE oracle", qoe_oracle},
      {7, "action space and pyramid", pyramid_exactness},
      {8, "PPO bandit sanity", bandit_sanity},
      {9, "behavioral differentiation", behavioral_differentiation},
      {10, "identifier reward ablation", repl_ablation},
      {11, "CLI determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d %s  %s (%.1fs): %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name, seconds_since(t0),
                o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
