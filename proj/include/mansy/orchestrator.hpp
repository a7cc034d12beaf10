#pragma once

// Adversarial training loop for the bitrate agent and its preference
// identifier, greedy evaluation campaigns, and the environments they run on.

#include "mansy/agent.hpp"
#include "mansy/identifier.hpp"
#include "mansy/simenv.hpp"
#include "mansy/vp_model.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace mansy::rl {

struct StepOutcome {
  std::vector<double> state;  ///< state part of the next observation
  double qoe = 0.0;           ///< preference-weighted score, scaled for use as a reward
  double raw_qoe = 0.0;       ///< same score in its natural units
  bool done = false;
  ChunkQoEBreakdown breakdown;  ///< raw terms (streaming environments only)
  double r_in = 0.0;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string name() const = 0;
  virtual int state_width() const = 0;
  virtual int action_count() const = 0;
  /// Starts an episode; `seed` selects its randomised start.
  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  virtual StepOutcome step(int action, const QoEPreference& pref) = 0;
};

/// Maps viewport histories to forecasts of the next samples.
using HistoryForecaster = std::function<std::vector<Trajectory>(const std::vector<Trajectory>& histories)>;

/// Repeats the last history sample `horizon` times.
HistoryForecaster last_position_forecaster(int horizon);
/// Feeds each history to every input head and averages the output heads.
HistoryForecaster mtio_forecaster(std::shared_ptr<const vp::MtioTransformer<float>> model);

struct ChunkMasks {
  std::vector<TileMask> predicted;
  std::vector<TileMask> actual;
};

/// Actual mask of chunk c: union over its samples. Predicted mask: union over
/// the forecast made from the `history_len` samples before the chunk; chunk 0
/// uses the first sample.
ChunkMasks chunk_masks(const Trajectory& trajectory, int samples_per_chunk, int chunks, int history_len,
                       const HistoryForecaster& forecast, const FieldOfView& fov, const TileGrid& grid);

/// Streams one video for one viewer over one bandwidth trace. Each episode
/// starts at a seeded offset into the bandwidth trace.
class StreamingEnvironment : public Environment {
 public:
  StreamingEnvironment(std::string name, Simulator sim, ChunkMasks masks);

  std::string name() const override { return name_; }
  int state_width() const override;
  int action_count() const override { return static_cast<int>(actions_.size()); }
  std::vector<double> reset(std::uint64_t seed) override;
  StepOutcome step(int action, const QoEPreference& pref) override;

  const Simulator& simulator() const { return sim_; }
  const SessionState& session() const { return session_; }
  const TileMask& predicted_next() const;
  const std::vector<BitrateAction>& actions() const { return actions_; }
  const std::vector<StepRecord>& records() const { return records_; }
  int chunks() const { return static_cast<int>(masks_.actual.size()); }

 private:
  std::vector<double> observe() const;

  std::string name_;
  Simulator sim_;
  ChunkMasks masks_;
  ObservationScales scales_;
  std::vector<BitrateAction> actions_;
  SessionState session_;
  std::vector<StepRecord> records_;
};

/// Repeated pulls of arms whose score under a preference is the dot product
/// of the preference with the arm's payoff vector.
class BanditEnvironment : public Environment {
 public:
  BanditEnvironment(std::vector<std::array<double, 3>> payoffs, int pulls_per_episode);

  std::string name() const override { return "bandit"; }
  int state_width() const override { return 1; }
  int action_count() const override { return static_cast<int>(payoffs_.size()); }
  std::vector<double> reset(std::uint64_t seed) override;
  StepOutcome step(int action, const QoEPreference& pref) override;

 private:
  std::vector<std::array<double, 3>> payoffs_;
  int pulls_ = 1;
  int step_ = 0;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual int act(const Environment& env, const std::vector<double>& observation) = 0;
};

/// Most probable action of a trained agent.
class GreedyPolicy : public Policy {
 public:
  explicit GreedyPolicy(const PolicyNetwork<float>& net) : net_(net) {}
  std::string name() const override { return "agent"; }
  int act(const Environment& env, const std::vector<double>& observation) override;

 private:
  const PolicyNetwork<float>& net_;
};

/// Draws actions from the agent's distribution, as during training.
class SampledPolicy : public Policy {
 public:
  SampledPolicy(const PolicyNetwork<float>& net, std::uint64_t seed) : net_(net), rng_(seed) {}
  std::string name() const override { return "sampled"; }
  int act(const Environment& env, const std::vector<double>& observation) override;

 private:
  const PolicyNetwork<float>& net_;
  std::mt19937_64 rng_;
};

/// heuristic_policy on the harmonic mean of the measured throughputs.
/// Streaming environments only.
class HeuristicPolicy : public Policy {
 public:
  std::string name() const override { return "heuristic"; }
  int act(const Environment& env, const std::vector<double>& observation) override;
};

struct TrainingConfig {
  int iterations = 100;
  int preference_batch = 4;
  int episodes_per_preference = 1;
  double alpha = 0.5;
  bool train_identifier = true;
  PpoConfig ppo;
  IdentifierUpdate identifier{1e-4, 4, 64, true};
  AgentConfig agent;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainingConfig& c);
TrainingConfig training_config_from_json(const nlohmann::json& j);

struct IterationDiagnostics {
  int iteration = 0;
  double alpha = 0.0;
  double mean_reward = 0.0;
  double mean_qoe = 0.0;
  std::vector<double> qoe_per_preference;  ///< pool order; NaN when not sampled
  double identifier_mse = 0.0;             ///< on this iteration's samples after the update
  double mi_term_mean = 0.0;
  PpoDiagnostics ppo;
  long env_steps = 0;
  long episodes = 0;
};

/// Per iteration: draw preferences, roll out one fixed preference per
/// episode, update the identifier on those samples, score them with the
/// updated identifier, then take a policy step on the mixed reward.
/// Rollouts, identifier minibatches and policy minibatches use separate
/// random streams.
class Trainer {
 public:
  Trainer(TrainingConfig config, std::vector<QoEPreference> pool, std::vector<Environment*> envs);

  void run_iteration();
  void run(int iterations);

  const TrainingConfig& config() const { return config_; }
  const PolicyNetwork<float>& agent() const { return agent_; }
  const Identifier<float>& identifier() const { return identifier_; }
  const std::vector<IterationDiagnostics>& diagnostics() const { return diagnostics_; }
  /// Transitions of the latest iteration.
  const RolloutBatch& last_rollout() const { return last_rollout_; }
  int iteration() const { return static_cast<int>(diagnostics_.size()); }

  /// Everything needed to continue bit for bit: parameters, optimiser
  /// moments, random streams and diagnostics.
  Checkpoint save() const;
  static Trainer resume(const Checkpoint& ckpt, std::vector<QoEPreference> pool, std::vector<Environment*> envs);

 private:
  TrainingConfig config_;
  std::vector<QoEPreference> pool_;
  std::vector<Environment*> envs_;
  PolicyNetwork<float> agent_;
  Identifier<float> identifier_;
  Adam<float> agent_opt_;
  Adam<float> identifier_opt_;
  std::mt19937_64 rollout_rng_, identifier_rng_, ppo_rng_;
  std::vector<IterationDiagnostics> diagnostics_;
  RolloutBatch last_rollout_;
};

struct TrainingResult {
  PolicyNetwork<float> agent;
  Identifier<float> identifier;
  std::vector<IterationDiagnostics> diagnostics;
};

TrainingResult run_training(const TrainingConfig& config, const std::vector<QoEPreference>& pool,
                            const std::vector<Environment*>& envs);

/// Same loop with alpha forced to 0 and the identifier never updated.
TrainingResult run_ablation_no_repl(TrainingConfig config, const std::vector<QoEPreference>& pool,
                                    const std::vector<Environment*>& envs);

/// CSV `iter,identifier_mse,mi_term_mean,alpha,mean_reward,mean_qoe,entropy,clip_fraction,env_steps`.
std::string diagnostics_csv(const std::vector<IterationDiagnostics>& diagnostics);

struct EvaluationRow {
  std::size_t preference_index = 0;
  QoEPreference preference;
  std::string trace;
  int chunks = 0;
  double qoe_mean = 0.0, qoe_p10 = 0.0, qoe_p50 = 0.0, qoe_p90 = 0.0;
  double q1_mean = 0.0, q2_mean = 0.0, q3_mean = 0.0;
  double r_in_mean = 0.0;
  double rebuffer_total = 0.0;
};

/// Called after each evaluation episode with the preference index and the
/// environment in its end-of-episode state.
using EpisodeObserver = std::function<void(std::size_t preference_index, const Environment& env)>;

/// One episode per (preference, environment) with the policy acting on every
/// chunk. Episode starts depend only on `seed` and the environment position.
std::vector<EvaluationRow> run_evaluation(Policy& policy, const std::vector<QoEPreference>& prefs,
                                          const std::vector<Environment*>& envs, std::uint64_t seed,
                                          const EpisodeObserver& on_episode = {});

/// Same episodes as run_evaluation, keeping the (state, action, preference) of every step.
IdentifierSamples collect_samples(Policy& policy, const std::vector<QoEPreference>& prefs,
                                  const std::vector<Environment*>& envs, std::uint64_t seed);

/// CSV `preference,lambda1,lambda2,lambda3,trace,chunks,qoe_mean,qoe_p10,qoe_p50,qoe_p90,q1_mean,q2_mean,q3_mean,r_in_mean,rebuffer_total`.
std::string evaluation_csv(const std::vector<EvaluationRow>& rows);

/// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

}  // namespace mansy::rl
