#pragma once

// Preference-conditioned bitrate policy with a shared value head, and the
// clipped-ratio policy-gradient update used to train it.
//
// An observation row is the concatenation of the state groups (each one a
// flat vector) followed by the preference. Every state group has its own
// full-width filter bank, which is the same as a dense layer over the group.

#include "mansy/autodiff.hpp"
#include "mansy/checkpoint.hpp"
#include "mansy/nn.hpp"
#include "mansy/optim.hpp"
#include "mansy/simenv.hpp"

#include <json.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mansy::rl {

struct AgentConfig {
  std::vector<int> state_inputs;  ///< width of each state group, observation order
  int preference_dim = 3;
  int actions = 15;
  int feature_width = 128;
  int hidden_width = 1280;

  int state_width() const;
  int observation_width() const { return state_width() + preference_dim; }
  void validate() const;

  /// Groups Z, R, v, g, n, q1, q2, q3, b for a streaming session.
  static AgentConfig streaming(int tiles, int rungs, int history);
};

nlohmann::json to_json(const AgentConfig& c);
AgentConfig agent_config_from_json(const nlohmann::json& j);

/// Fixed divisors that bring each state group to order one.
struct ObservationScales {
  double tile_bits = 1.0;     ///< bits of a max-rung tile at nominal size
  double max_rung = 1.0;      ///< Mbps
  double throughput = 10.0;   ///< Mbps
  double buffer_cap = 4.0;    ///< seconds
  double stall = 1.0;         ///< seconds

  static ObservationScales for_simulator(const Simulator& sim);
};

/// Flattens an EnvState into the state part of an observation row.
std::vector<double> encode_state(const EnvState& s, const ObservationScales& scales);

/// Dense + ReLU per state group, concatenated. Parameters "<prefix>state<i>".
template <typename T>
ad::Var<T> state_features(const Binder<T>& p, const std::string& prefix, const std::vector<int>& groups,
                          ad::Var<T> state) {
  std::vector<ad::Var<T>> parts;
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    parts.push_back(ad::relu(dense(p, prefix + "state" + std::to_string(i), ad::slice_cols(state, offset, groups[i]))));
    offset += groups[i];
  }
  return ad::concat_cols(parts);
}

template <typename T>
void add_state_features(ParameterStore<T>& store, std::uint64_t seed, const std::string& prefix,
                        const std::vector<int>& groups, int width) {
  for (std::size_t i = 0; i < groups.size(); ++i)
    add_dense(store, seed, prefix + "state" + std::to_string(i), groups[i], width);
}

template <typename T>
struct PolicyOutput {
  ad::Var<T> logits;    ///< B x actions
  ad::Var<T> value;     ///< B x 1
};

template <typename T>
class PolicyNetwork {
 public:
  PolicyNetwork(const AgentConfig& config, std::uint64_t seed);

  const AgentConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }

  /// `obs` is B x observation_width.
  PolicyOutput<T> forward(const Binder<T>& p, ad::Var<T> obs) const;

  /// Action probabilities for one observation row.
  std::vector<double> distribution(const std::vector<double>& observation) const;
  double value(const std::vector<double>& observation) const;
  /// Probabilities (row-wise) and values for a batch.
  void evaluate(const ad::Matrix<T>& obs, ad::Matrix<T>& probs, ad::Matrix<T>& values) const;

  Checkpoint to_checkpoint() const;
  static PolicyNetwork from_checkpoint(const Checkpoint& ckpt);

 private:
  AgentConfig config_;
  std::uint64_t seed_ = 0;
  ParameterStore<T> params_;
};

struct PpoConfig {
  double clip = 0.2;
  double discount = 0.95;
  double gae_lambda = 0.95;
  int epochs = 4;
  int minibatch = 64;
  double value_coef = 0.5;
  double entropy_coef = 0.02;
  double learning_rate = 5e-4;
  double max_grad_norm = 0.5;
  bool normalize_advantages = true;
};

/// Transitions in collection order. `episode_end[i]` marks the last step of
/// an episode; no value is bootstrapped past it.
struct RolloutBatch {
  std::vector<std::vector<double>> observations;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> log_probs;
  std::vector<char> episode_end;

  std::size_t size() const { return actions.size(); }
  void append(const RolloutBatch& other);
};

/// Generalised advantage estimates and the matching value targets.
void compute_advantages(const RolloutBatch& batch, double discount, double lambda, std::vector<double>& advantages,
                        std::vector<double>& returns);

struct PpoDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  int updates = 0;
};

/// One minibatch objective: -clipped surrogate + value_coef * value error
/// - entropy_coef * entropy. Adds batch statistics into `diag` when given.
template <typename T>
ad::Var<T> ppo_loss(const PolicyNetwork<T>& net, const Binder<T>& p, const ad::Matrix<T>& obs,
                    const std::vector<int>& actions, const ad::Matrix<T>& old_log_probs,
                    const ad::Matrix<T>& advantages, const ad::Matrix<T>& returns, const PpoConfig& config,
                    PpoDiagnostics* diag = nullptr);

/// Several epochs of shuffled minibatch steps over `batch`. Throws
/// std::invalid_argument for batches with fewer than two transitions.
PpoDiagnostics ppo_update(PolicyNetwork<float>& net, Adam<float>& optimizer, const RolloutBatch& batch,
                          const PpoConfig& config, std::mt19937_64& rng);

/// Samples an index from `probs`.
int sample_action(const std::vector<double>& probs, std::mt19937_64& rng);
int greedy_action(const std::vector<double>& probs);

extern template class PolicyNetwork<float>;
extern template class PolicyNetwork<double>;

}  // namespace mansy::rl
