#include "mansy/identifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mansy::rl {

int IdentifierConfig::state_width() const { return std::accumulate(state_inputs.begin(), state_inputs.end(), 0); }

void IdentifierConfig::validate() const {
  if (state_inputs.empty()) throw std::invalid_argument("identifier needs at least one state group");
  for (int w : state_inputs)
    if (w < 1) throw std::invalid_argument("state group widths must be positive");
  if (actions < 1 || outputs < 1 || feature_width < 1 || hidden_width < 1)
    throw std::invalid_argument("identifier dimensions must be positive");
}

IdentifierConfig IdentifierConfig::matching(const AgentConfig& a) {
  IdentifierConfig c;
  c.state_inputs = a.state_inputs;
  c.actions = a.actions;
  c.outputs = a.preference_dim;
  c.feature_width = a.feature_width;
  c.hidden_width = a.hidden_width;
  return c;
}

nlohmann::json to_json(const IdentifierConfig& c) {
  return {{"state_inputs", c.state_inputs}, {"actions", c.actions}, {"outputs", c.outputs},
          {"feature_width", c.feature_width}, {"hidden_width", c.hidden_width}};
}

IdentifierConfig identifier_config_from_json(const nlohmann::json& j) {
  IdentifierConfig c;
  c.state_inputs = j.at("state_inputs").get<std::vector<int>>();
  c.actions = j.at("actions").get<int>();
  c.outputs = j.at("outputs").get<int>();
  c.feature_width = j.at("feature_width").get<int>();
  c.hidden_width = j.at("hidden_width").get<int>();
  c.validate();
  return c;
}

template <typename T>
Identifier<T>::Identifier(const IdentifierConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  const int f = config_.feature_width;
  const int groups = static_cast<int>(config_.state_inputs.size());
  add_state_features(params_, seed, "", config_.state_inputs, f);
  add_dense(params_, seed, "action", config_.actions, f);
  add_dense(params_, seed, "fc1", (groups + 1) * f, config_.hidden_width);
  add_dense(params_, seed, "fc2", config_.hidden_width, f);
  add_dense(params_, seed, "out", f, config_.outputs);
}

template <typename T>
ad::Var<T> Identifier<T>::forward(const Binder<T>& p, ad::Var<T> state, const std::vector<int>& actions) const {
  if (state.cols() != config_.state_width() || static_cast<std::size_t>(state.rows()) != actions.size())
    throw std::invalid_argument("identifier input shape mismatch");
  ad::Matrix<T> onehot = ad::Matrix<T>::Zero(state.rows(), config_.actions);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i] < 0 || actions[i] >= config_.actions) throw std::invalid_argument("action index out of range");
    onehot(static_cast<Eigen::Index>(i), actions[i]) = T(1);
  }
  const auto action_feat = ad::relu(dense(p, "action", p.tape().constant(std::move(onehot))));
  const auto joined = ad::concat_cols(std::vector{state_features(p, "", config_.state_inputs, state), action_feat});
  const auto h1 = ad::relu(dense(p, "fc1", joined));
  const auto h2 = ad::add(ad::relu(dense(p, "fc2", h1)), action_feat);
  return ad::sigmoid(dense(p, "out", h2));
}

template <typename T>
ad::Matrix<T> Identifier<T>::identify_batch(const ad::Matrix<T>& states, const std::vector<int>& actions) const {
  ad::Tape<T> tape;
  const Binder<T> p(tape, params_);
  return forward(p, tape.constant(states), actions).value();
}

template <typename T>
IdentifiedPreference Identifier<T>::identify(std::span<const double> state, int action) const {
  if (config_.outputs != 3) throw std::logic_error("identify expects three outputs");
  ad::Matrix<T> s(1, static_cast<Eigen::Index>(state.size()));
  for (std::size_t i = 0; i < state.size(); ++i) s(0, static_cast<Eigen::Index>(i)) = static_cast<T>(state[i]);
  const auto y = identify_batch(s, {action});
  return {static_cast<double>(y(0, 0)), static_cast<double>(y(0, 1)), static_cast<double>(y(0, 2))};
}

template <typename T>
Checkpoint Identifier<T>::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "identifier";
  ckpt.seed = seed_;
  ckpt.config = {{"identifier", to_json(config_)}};
  append_store(ckpt, params_);
  return ckpt;
}

template <typename T>
Identifier<T> Identifier<T>::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "identifier") throw std::runtime_error("checkpoint kind '" + ckpt.kind + "' is not an identifier");
  Identifier id(identifier_config_from_json(ckpt.config.at("identifier")), ckpt.seed);
  restore_store(id.params_, ckpt);
  return id;
}

double mi_reward_term(const QoEPreference& truth, const IdentifiedPreference& identified) {
  const auto w = truth.as_array();
  double mse = 0.0;
  for (std::size_t i = 0; i < 3; ++i) mse += (w[i] - identified[i]) * (w[i] - identified[i]);
  return -std::log(std::max(mse / 3.0, kMseFloor));
}

double combined_reward(double qoe, double mi, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must lie in [0, 1]");
  return (1.0 - alpha) * qoe + alpha * mi;
}

namespace {

void gather(const IdentifierSamples& s, std::span<const std::size_t> rows, ad::Matrix<float>& states,
            std::vector<int>& actions, ad::Matrix<float>& targets) {
  const auto width = static_cast<Eigen::Index>(s.states.front().size());
  const auto n = static_cast<Eigen::Index>(rows.size());
  states.resize(n, width);
  targets.resize(n, 3);
  actions.resize(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t k = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < width; ++c) states(i, c) = static_cast<float>(s.states[k][static_cast<std::size_t>(c)]);
    const auto w = s.prefs[k].as_array();
    for (Eigen::Index c = 0; c < 3; ++c) targets(i, c) = static_cast<float>(w[static_cast<std::size_t>(c)]);
    actions[static_cast<std::size_t>(i)] = s.actions[k];
  }
}

}  // namespace

double update_identifier(Identifier<float>& identifier, Adam<float>& optimizer, const IdentifierSamples& samples,
                         const IdentifierUpdate& options, std::mt19937_64& rng) {
  const std::size_t n = samples.size();
  if (n == 0) throw std::invalid_argument("identifier update needs at least one sample");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = options.minibatch > 0 ? static_cast<std::size_t>(options.minibatch) : n;
  if (options.adam) optimizer.set_lr(options.learning_rate);
  double total = 0.0;
  int steps = 0;
  ad::Matrix<float> states, targets;
  std::vector<int> actions;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += mb) {
      const std::size_t end = std::min(n, start + mb);
      gather(samples, std::span(order).subspan(start, end - start), states, actions, targets);
      const std::function<ad::Var<float>(const Binder<float>&)> predict = [&](const Binder<float>& p) {
        return identifier.forward(p, p.tape().constant(states), actions);
      };
      if (options.adam) {
        auto& store = identifier.parameters();
        store.zero_grad();
        ad::Tape<float> tape;
        const Binder<float> p(tape, store);
        const auto loss = mean_squared_error(predict(p), targets);
        tape.backward(loss);
        optimizer.step(store);
        total += static_cast<double>(loss.value()(0, 0));
      } else {
        total += mse_gradient_step(identifier.parameters(), predict, targets, options.learning_rate);
      }
      ++steps;
    }
  }
  return steps ? total / steps : 0.0;
}

double identifier_mse(const Identifier<float>& identifier, const IdentifierSamples& samples) {
  if (samples.size() == 0) return 0.0;
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  ad::Matrix<float> states, targets;
  std::vector<int> actions;
  double sq = 0.0;
  for (std::size_t start = 0; start < all.size(); start += 512) {
    const std::size_t end = std::min(all.size(), start + 512);
    gather(samples, std::span(all).subspan(start, end - start), states, actions, targets);
    const auto pred = identifier.identify_batch(states, actions);
    sq += static_cast<double>((pred - targets).cast<double>().squaredNorm());
  }
  return sq / (3.0 * static_cast<double>(samples.size()));
}

template class Identifier<float>;
template class Identifier<double>;

}  // namespace mansy::rl
