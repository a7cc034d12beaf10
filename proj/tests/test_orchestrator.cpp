#include "mansy/orchestrator.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <stdexcept>

using namespace mansy;
using namespace mansy::rl;

namespace {

const TileGrid kGrid{2, 4, 1920.0, 960.0};
const FieldOfView kFov{0.3, 0.4};
constexpr int kChunks = 6;
constexpr int kSamplesPerChunk = 5;

Trajectory wandering_viewer(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> step(0.0, 60.0);
  Trajectory t{{}, 0.2};
  ViewportPoint p{900.0, 480.0};
  for (int i = 0; i < kChunks * kSamplesPerChunk; ++i) {
    t.points.push_back(p);
    p = wrap_into_frame({p.x + step(rng), p.y + 0.3 * step(rng)}, kGrid);
  }
  return t;
}

StreamingEnvironment small_stream(const std::string& name, std::uint64_t seed) {
  BandwidthTrace trace{0.5, {}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> bw(1.0, 6.0);
  for (int i = 0; i < 40; ++i) trace.mbps.push_back(bw(rng));
  Simulator sim(synthetic_manifest(kGrid, BitrateLadder{}, kChunks, 1.0, seed), trace, SimConfig{});
  return {name, sim,
          chunk_masks(wandering_viewer(seed), kSamplesPerChunk, kChunks, 5, last_position_forecaster(5), kFov, kGrid)};
}

TrainingConfig small_training(std::uint64_t seed) {
  TrainingConfig c;
  c.iterations = 2;
  c.preference_batch = 2;
  c.episodes_per_preference = 1;
  c.agent = AgentConfig::streaming(kGrid.tile_count(), 5, SimConfig{}.history);
  c.agent.feature_width = 6;
  c.agent.hidden_width = 12;
  c.ppo.minibatch = 4;
  c.ppo.epochs = 2;
  c.identifier.minibatch = 4;
  c.identifier.learning_rate = 1e-3;
  c.seed = seed;
  return c;
}

template <typename T>
bool same_parameters(const ParameterStore<T>& a, const ParameterStore<T>& b) {
  if (a.entries().size() != b.entries().size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i)
    if (a.entries()[i].value != b.entries()[i].value) return false;
  return true;
}

bool same_diagnostics(const IterationDiagnostics& a, const IterationDiagnostics& b) {
  const auto eq = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
  if (a.qoe_per_preference.size() != b.qoe_per_preference.size()) return false;
  for (std::size_t i = 0; i < a.qoe_per_preference.size(); ++i)
    if (!eq(a.qoe_per_preference[i], b.qoe_per_preference[i])) return false;
  return a.iteration == b.iteration && a.alpha == b.alpha && a.mean_reward == b.mean_reward &&
         a.mean_qoe == b.mean_qoe && a.identifier_mse == b.identifier_mse && a.mi_term_mean == b.mi_term_mean &&
         a.ppo.policy_loss == b.ppo.policy_loss && a.ppo.value_loss == b.ppo.value_loss &&
         a.ppo.entropy == b.ppo.entropy && a.ppo.clip_fraction == b.ppo.clip_fraction && a.env_steps == b.env_steps;
}

}  // namespace

TEST_CASE("chunk masks use the sample union and the forecast from the preceding history") {
  const Trajectory t = wandering_viewer(4);
  const auto masks = chunk_masks(t, kSamplesPerChunk, kChunks, 3, last_position_forecaster(5), kFov, kGrid);
  REQUIRE(masks.actual.size() == kChunks);
  REQUIRE(masks.predicted.size() == kChunks);
  CHECK(masks.predicted[0] == viewport_tile_mask(t.points[0], kFov, kGrid));
  for (int c = 0; c < kChunks; ++c) {
    TileMask u(kGrid);
    for (int s = 0; s < kSamplesPerChunk; ++s) u |= viewport_tile_mask(t.points[c * kSamplesPerChunk + s], kFov, kGrid);
    CHECK(masks.actual[static_cast<std::size_t>(c)] == u);
    if (c > 0)
      CHECK(masks.predicted[static_cast<std::size_t>(c)] ==
            viewport_tile_mask(t.points[c * kSamplesPerChunk - 1], kFov, kGrid));
  }
}

TEST_CASE("short early histories are padded with the first sample") {
  const Trajectory t = wandering_viewer(5);
  std::vector<Trajectory> seen;
  const HistoryForecaster spy = [&](const std::vector<Trajectory>& h) {
    seen = h;
    return last_position_forecaster(2)(h);
  };
  chunk_masks(t, kSamplesPerChunk, kChunks, 7, spy, kFov, kGrid);
  REQUIRE(seen.size() == kChunks - 1);
  const auto& first = seen[0].points;
  REQUIRE(first.size() == 7);
  CHECK(first[0] == t.points[0]);
  CHECK(first[1] == t.points[0]);
  CHECK(first[2] == t.points[0]);
  for (int i = 0; i < 5; ++i) CHECK(first[static_cast<std::size_t>(2 + i)] == t.points[static_cast<std::size_t>(i)]);
  CHECK(seen[2].points.back() == t.points[14]);
  CHECK_THROWS_AS(chunk_masks(t, kSamplesPerChunk, kChunks + 1, 3, spy, kFov, kGrid), std::invalid_argument);
}

TEST_CASE("streaming episodes cover every chunk and repeat under the same seed") {
  auto env = small_stream("a", 1);
  const QoEPreference pref{0.5, 0.25, 0.25};
  const auto run = [&](std::uint64_t seed) {
    std::vector<double> totals;
    auto obs = env.reset(seed);
    CHECK(static_cast<int>(obs.size()) == env.state_width());
    int steps = 0;
    bool done = false;
    while (!done) {
      const auto out = env.step(steps % env.action_count(), pref);
      CHECK(out.qoe == doctest::Approx(out.raw_qoe / 35.0));
      CHECK(out.raw_qoe == doctest::Approx(out.breakdown.total));
      totals.push_back(out.raw_qoe);
      done = out.done;
      ++steps;
    }
    CHECK(steps == kChunks);
    CHECK_THROWS_AS(env.step(0, pref), std::logic_error);
    return totals;
  };
  CHECK(run(7) == run(7));
  CHECK(env.records().size() == kChunks);
}

TEST_CASE("heuristic policy picks the lowest action with no throughput history") {
  auto env = small_stream("a", 2);
  HeuristicPolicy h;
  const auto obs = env.reset(0);
  CHECK(h.act(env, obs) == 0);
  BanditEnvironment bandit({{1, 0, 0}}, 1);
  CHECK_THROWS_AS(h.act(bandit, {0.0}), std::invalid_argument);
}

TEST_CASE("zero iterations leave the networks at their initial values") {
  auto env = small_stream("a", 1);
  auto config = small_training(3);
  config.iterations = 0;
  const auto pool = preference_pool().train;
  const auto result = run_training(config, pool, {&env});
  CHECK(result.diagnostics.empty());
  const PolicyNetwork<float> fresh(config.agent, derive_seed(3, "agent"));
  CHECK(same_parameters(result.agent.parameters(), fresh.parameters()));
}

TEST_CASE("training with a fixed seed is reproducible") {
  auto env1 = small_stream("a", 1), env2 = small_stream("b", 2);
  const auto pool = preference_pool().train;
  const auto a = run_training(small_training(9), pool, {&env1, &env2});
  const auto b = run_training(small_training(9), pool, {&env1, &env2});
  REQUIRE(a.diagnostics.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(same_diagnostics(a.diagnostics[i], b.diagnostics[i]));
  CHECK(same_parameters(a.agent.parameters(), b.agent.parameters()));
  CHECK(same_parameters(a.identifier.parameters(), b.identifier.parameters()));
  CHECK(diagnostics_csv(a.diagnostics) == diagnostics_csv(b.diagnostics));
  CHECK(diagnostics_csv(a.diagnostics).rfind("iter,identifier_mse,mi_term_mean", 0) == 0);
}

TEST_CASE("each iteration samples distinct preferences") {
  auto env = small_stream("a", 1);
  auto config = small_training(4);
  config.iterations = 5;
  const auto result = run_training(config, preference_pool().train, {&env});
  for (const auto& d : result.diagnostics) {
    int sampled = 0;
    for (double q : d.qoe_per_preference) sampled += std::isnan(q) ? 0 : 1;
    CHECK(sampled == config.preference_batch);
    CHECK(d.env_steps == config.preference_batch * kChunks);
  }
}

TEST_CASE("the no-identifier ablation keeps alpha at zero and the identifier fixed") {
  auto env = small_stream("a", 1);
  auto config = small_training(5);
  config.alpha = 0.7;
  const auto pool = preference_pool().train;
  const auto result = run_ablation_no_repl(config, pool, {&env});
  for (const auto& d : result.diagnostics) CHECK(d.alpha == 0.0);
  const Identifier<float> fresh(IdentifierConfig::matching(config.agent), derive_seed(5, "identifier"));
  CHECK(same_parameters(result.identifier.parameters(), fresh.parameters()));
}

TEST_CASE("the reward mix does not change the first rollout") {
  auto env = small_stream("a", 1);
  const auto pool = preference_pool().train;
  auto c0 = small_training(6), c1 = small_training(6);
  c0.alpha = 0.0;
  c1.alpha = 0.5;
  Trainer t0(c0, pool, {&env}), t1(c1, pool, {&env});
  t0.run_iteration();
  t1.run_iteration();
  CHECK(t0.last_rollout().actions == t1.last_rollout().actions);
  CHECK(t0.last_rollout().observations == t1.last_rollout().observations);
  CHECK(t0.last_rollout().rewards != t1.last_rollout().rewards);
  CHECK(t0.diagnostics()[0].identifier_mse == t1.diagnostics()[0].identifier_mse);
}

TEST_CASE("mixed rewards follow the identifier score") {
  auto env = small_stream("a", 1);
  auto config = small_training(8);
  config.alpha = 1.0;
  config.train_identifier = false;
  Trainer t(config, preference_pool().train, {&env});
  t.run_iteration();
  const auto& d = t.diagnostics()[0];
  CHECK(d.mean_reward == doctest::Approx(d.mi_term_mean).epsilon(1e-9));
  CHECK(d.mi_term_mean == doctest::Approx(-std::log(d.identifier_mse)).epsilon(0.5));
}

TEST_CASE("resuming from a checkpoint continues bit for bit") {
  auto env = small_stream("a", 1);
  const auto pool = preference_pool().train;
  auto config = small_training(11);
  Trainer straight(config, pool, {&env});
  straight.run(3);

  Trainer first(config, pool, {&env});
  first.run(1);
  const auto path = std::filesystem::temp_directory_path() / "mansy_trainer_resume.ckpt";
  save_checkpoint(path, first.save());
  Trainer resumed = Trainer::resume(load_checkpoint(path), pool, {&env});
  std::filesystem::remove(path);
  resumed.run(2);

  REQUIRE(resumed.diagnostics().size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(same_diagnostics(straight.diagnostics()[i], resumed.diagnostics()[i]));
  CHECK(same_parameters(straight.agent().parameters(), resumed.agent().parameters()));
  CHECK(same_parameters(straight.identifier().parameters(), resumed.identifier().parameters()));

  auto other = pool;
  other[0] = QoEPreference{0.2, 0.4, 0.4};
  CHECK_THROWS_AS(Trainer::resume(first.save(), other, {&env}), std::invalid_argument);
}

TEST_CASE("mismatched environments are rejected") {
  BanditEnvironment bandit({{1, 0, 0}, {0, 1, 0}}, 4);
  CHECK_THROWS_AS(Trainer(small_training(1), preference_pool().train, {&bandit}), std::invalid_argument);
  auto env = small_stream("a", 1);
  CHECK_THROWS_AS(Trainer(small_training(1), {}, {&env}), std::invalid_argument);
  auto bad = small_training(1);
  bad.alpha = 1.5;
  CHECK_THROWS_AS(Trainer(bad, preference_pool().train, {&env}), std::invalid_argument);
}

TEST_CASE("sampled policy is repeatable per seed and explores beyond the greedy action") {
  auto env = small_stream("a", 1);
  const auto config = small_training(6);
  const PolicyNetwork<float> net(config.agent, 6);
  const auto pool = preference_pool().train;
  SampledPolicy p1(net, 11), p2(net, 11);
  GreedyPolicy greedy(net);
  const auto a = collect_samples(p1, pool, {&env}, 2);
  const auto b = collect_samples(p2, pool, {&env}, 2);
  const auto g = collect_samples(greedy, pool, {&env}, 2);
  CHECK(a.actions == b.actions);
  CHECK(a.actions != g.actions);
  CHECK(std::set<int>(a.actions.begin(), a.actions.end()).size() > 1);
}

TEST_CASE("evaluation yields one repeatable row per preference and trace") {
  auto env1 = small_stream("a", 1), env2 = small_stream("b", 2);
  const auto pool = preference_pool().held_out;
  HeuristicPolicy h;
  const auto rows = run_evaluation(h, pool, {&env1, &env2}, 3);
  REQUIRE(rows.size() == pool.size() * 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].preference_index == i / 2);
    CHECK(rows[i].trace == (i % 2 == 0 ? "a" : "b"));
    CHECK(rows[i].chunks == kChunks);
    CHECK(rows[i].qoe_p10 <= rows[i].qoe_p50);
    CHECK(rows[i].qoe_p50 <= rows[i].qoe_p90);
    CHECK(rows[i].rebuffer_total == doctest::Approx(rows[i].q3_mean * kChunks));
  }
  CHECK(evaluation_csv(rows) == evaluation_csv(run_evaluation(h, pool, {&env1, &env2}, 3)));

  const PolicyNetwork<float> net(small_training(1).agent, 2);
  GreedyPolicy g(net);
  const auto samples = collect_samples(g, pool, {&env1}, 3);
  CHECK(samples.size() == pool.size() * kChunks);
  CHECK(samples.prefs.front().as_array() == pool.front().as_array());
}

TEST_CASE("percentile interpolates between order statistics") {
  CHECK(percentile({3.0, 1.0, 2.0}, 50.0) == 2.0);
  CHECK(percentile({1.0, 2.0}, 10.0) == doctest::Approx(1.1));
  CHECK(percentile({5.0}, 90.0) == 5.0);
  CHECK_THROWS_AS(percentile({}, 50.0), std::invalid_argument);
}

TEST_CASE("a preference-conditioned bandit learns to serve each preference") {
  BanditEnvironment bandit({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}, 8);
  const std::vector<QoEPreference> pool{{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.1, 0.1, 0.8}};
  TrainingConfig c;
  c.agent.state_inputs = {1};
  c.agent.actions = 3;
  c.agent.feature_width = 8;
  c.agent.hidden_width = 16;
  c.preference_batch = 3;
  c.episodes_per_preference = 2;
  c.ppo.minibatch = 16;
  c.ppo.learning_rate = 3e-3;
  c.ppo.entropy_coef = 0.0;
  c.identifier.minibatch = 16;
  c.alpha = 0.0;
  c.iterations = 150;
  c.seed = 2;
  const auto result = run_training(c, pool, {&bandit});
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto w = pool[i].as_array();
    const auto probs = result.agent.distribution({0.0, w[0], w[1], w[2]});
    CHECK(probs[i] > 0.9);
  }
}
