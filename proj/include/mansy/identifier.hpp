#pragma once

// Regressor from (state, action) back to the preference that produced the
// action. Its negative log squared error rewards the agent for acting in a
// way that reveals the preference.

#include "mansy/agent.hpp"
#include "mansy/qoe.hpp"

#include <array>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace mansy::rl {

struct IdentifierConfig {
  std::vector<int> state_inputs;
  int actions = 15;
  int outputs = 3;
  int feature_width = 128;
  int hidden_width = 1280;

  int state_width() const;
  void validate() const;
  static IdentifierConfig matching(const AgentConfig& agent);
};

nlohmann::json to_json(const IdentifierConfig& c);
IdentifierConfig identifier_config_from_json(const nlohmann::json& j);

using IdentifiedPreference = std::array<double, 3>;

template <typename T>
class Identifier {
 public:
  Identifier(const IdentifierConfig& config, std::uint64_t seed);

  const IdentifierConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }

  /// Sigmoid outputs, B x outputs. `state` is B x state_width.
  ad::Var<T> forward(const Binder<T>& p, ad::Var<T> state, const std::vector<int>& actions) const;

  IdentifiedPreference identify(std::span<const double> state, int action) const;
  /// Row-wise predictions for a batch.
  ad::Matrix<T> identify_batch(const ad::Matrix<T>& states, const std::vector<int>& actions) const;

  Checkpoint to_checkpoint() const;
  static Identifier from_checkpoint(const Checkpoint& ckpt);

 private:
  IdentifierConfig config_;
  std::uint64_t seed_ = 0;
  ParameterStore<T> params_;
};

constexpr double kMseFloor = 1e-6;

/// -log(max(mean squared error over the three weights, kMseFloor))
double mi_reward_term(const QoEPreference& truth, const IdentifiedPreference& identified);

/// (1 - alpha) * qoe + alpha * mi
double combined_reward(double qoe, double mi, double alpha);

/// Mean over rows and columns of (prediction - target)^2, as a tape scalar.
template <typename T>
ad::Var<T> mean_squared_error(ad::Var<T> prediction, const ad::Matrix<T>& target) {
  auto& tape = *prediction.tape;
  return ad::mean(ad::square(ad::sub(prediction, tape.constant(target))));
}

/// One plain gradient-descent step on mean_squared_error(predict(p), target).
/// Returns the loss before the step.
template <typename T>
double mse_gradient_step(ParameterStore<T>& store, const std::function<ad::Var<T>(const Binder<T>&)>& predict,
                         const ad::Matrix<T>& target, double learning_rate) {
  store.zero_grad();
  ad::Tape<T> tape;
  const Binder<T> p(tape, store);
  const auto loss = mean_squared_error(predict(p), target);
  tape.backward(loss);
  sgd_step(store, learning_rate);
  return static_cast<double>(loss.value()(0, 0));
}

struct IdentifierSamples {
  std::vector<std::vector<double>> states;
  std::vector<int> actions;
  std::vector<QoEPreference> prefs;

  std::size_t size() const { return actions.size(); }
};

struct IdentifierUpdate {
  double learning_rate = 1e-4;
  int epochs = 1;
  int minibatch = 64;     ///< <= 0: whole batch
  bool adam = true;       ///< false: plain gradient descent
};

/// Shuffled minibatch regression of the identifier onto the true preferences.
/// `optimizer` is used, at `options.learning_rate`, only when `options.adam` is set. Returns the mean
/// minibatch loss. Throws std::invalid_argument on an empty sample set.
double update_identifier(Identifier<float>& identifier, Adam<float>& optimizer, const IdentifierSamples& samples,
                         const IdentifierUpdate& options, std::mt19937_64& rng);

/// Mean squared error of the identifier over `samples`.
double identifier_mse(const Identifier<float>& identifier, const IdentifierSamples& samples);

extern template class Identifier<float>;
extern template class Identifier<double>;

}  // namespace mansy::rl
