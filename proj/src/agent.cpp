#include "mansy/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mansy::rl {

int AgentConfig::state_width() const { return std::accumulate(state_inputs.begin(), state_inputs.end(), 0); }

void AgentConfig::validate() const {
  if (state_inputs.empty()) throw std::invalid_argument("agent needs at least one state group");
  for (int w : state_inputs)
    if (w < 1) throw std::invalid_argument("state group widths must be positive");
  if (preference_dim < 1 || actions < 1 || feature_width < 1 || hidden_width < 1)
    throw std::invalid_argument("agent dimensions must be positive");
}

AgentConfig AgentConfig::streaming(int tiles, int rungs, int history) {
  AgentConfig c;
  c.state_inputs = {tiles * rungs, rungs, tiles, history, history, history, history, history, 1};
  c.actions = rungs * (rungs + 1) / 2;
  return c;
}

nlohmann::json to_json(const AgentConfig& c) {
  return {{"state_inputs", c.state_inputs}, {"preference_dim", c.preference_dim}, {"actions", c.actions},
          {"feature_width", c.feature_width}, {"hidden_width", c.hidden_width}};
}

AgentConfig agent_config_from_json(const nlohmann::json& j) {
  AgentConfig c;
  c.state_inputs = j.at("state_inputs").get<std::vector<int>>();
  c.preference_dim = j.at("preference_dim").get<int>();
  c.actions = j.at("actions").get<int>();
  c.feature_width = j.at("feature_width").get<int>();
  c.hidden_width = j.at("hidden_width").get<int>();
  c.validate();
  return c;
}

ObservationScales ObservationScales::for_simulator(const Simulator& sim) {
  const auto& m = sim.manifest();
  ObservationScales s;
  s.max_rung = m.ladder().max();
  s.tile_bits = s.max_rung * 1e6 * m.chunk_duration() / m.grid().tile_count();
  s.buffer_cap = sim.config().buffer_cap;
  s.stall = m.chunk_duration();
  return s;
}

std::vector<double> encode_state(const EnvState& s, const ObservationScales& k) {
  std::vector<double> out;
  out.reserve(s.Z.size() + s.R.size() + s.v.size() + 5 * s.g.size() + 1);
  for (double z : s.Z) out.push_back(z / k.tile_bits);
  for (double r : s.R) out.push_back(r / k.max_rung);
  for (std::size_t t = 0; t < s.v.size(); ++t) out.push_back(s.v[t] ? 1.0 : 0.0);
  for (double g : s.g) out.push_back(g);
  for (double n : s.n) out.push_back(n / k.throughput);
  for (double q : s.q1) out.push_back(q / k.max_rung);
  for (double q : s.q2) out.push_back(q / k.max_rung);
  for (double q : s.q3) out.push_back(q / k.stall);
  out.push_back(s.b / k.buffer_cap);
  return out;
}

template <typename T>
PolicyNetwork<T>::PolicyNetwork(const AgentConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  const int f = config_.feature_width;
  const int groups = static_cast<int>(config_.state_inputs.size());
  add_state_features(params_, seed, "", config_.state_inputs, f);
  add_dense(params_, seed, "pref", config_.preference_dim, f);
  add_dense(params_, seed, "fc1", (groups + 1) * f, config_.hidden_width);
  add_dense(params_, seed, "fc2", config_.hidden_width, f);
  add_dense(params_, seed, "pi", f, config_.actions);
  add_dense(params_, seed, "v", f, 1);
}

template <typename T>
PolicyOutput<T> PolicyNetwork<T>::forward(const Binder<T>& p, ad::Var<T> obs) const {
  if (obs.cols() != config_.observation_width())
    throw std::invalid_argument("observation width " + std::to_string(obs.cols()) + " != " +
                                std::to_string(config_.observation_width()));
  const auto state = ad::slice_cols(obs, 0, config_.state_width());
  const auto pref = ad::slice_cols(obs, config_.state_width(), config_.preference_dim);
  const auto pref_feat = ad::relu(dense(p, "pref", pref));
  const auto joined = ad::concat_cols(std::vector{state_features(p, "", config_.state_inputs, state), pref_feat});
  const auto h1 = ad::relu(dense(p, "fc1", joined));
  const auto h2 = ad::add(ad::relu(dense(p, "fc2", h1)), pref_feat);
  return {dense(p, "pi", h2), dense(p, "v", h2)};
}

template <typename T>
void PolicyNetwork<T>::evaluate(const ad::Matrix<T>& obs, ad::Matrix<T>& probs, ad::Matrix<T>& values) const {
  ad::Tape<T> tape;
  const Binder<T> p(tape, params_);
  const auto out = forward(p, tape.constant(obs));
  probs = ad::softmax_rows_value(out.logits.value());
  values = out.value.value();
}

template <typename T>
std::vector<double> PolicyNetwork<T>::distribution(const std::vector<double>& observation) const {
  ad::Matrix<T> obs(1, static_cast<Eigen::Index>(observation.size()));
  for (std::size_t i = 0; i < observation.size(); ++i) obs(0, static_cast<Eigen::Index>(i)) = static_cast<T>(observation[i]);
  ad::Matrix<T> probs, values;
  evaluate(obs, probs, values);
  std::vector<double> out(static_cast<std::size_t>(probs.cols()));
  for (Eigen::Index a = 0; a < probs.cols(); ++a) out[static_cast<std::size_t>(a)] = static_cast<double>(probs(0, a));
  return out;
}

template <typename T>
double PolicyNetwork<T>::value(const std::vector<double>& observation) const {
  ad::Matrix<T> obs(1, static_cast<Eigen::Index>(observation.size()));
  for (std::size_t i = 0; i < observation.size(); ++i) obs(0, static_cast<Eigen::Index>(i)) = static_cast<T>(observation[i]);
  ad::Matrix<T> probs, values;
  evaluate(obs, probs, values);
  return static_cast<double>(values(0, 0));
}

template <typename T>
Checkpoint PolicyNetwork<T>::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "policy";
  ckpt.seed = seed_;
  ckpt.config = {{"agent", to_json(config_)}};
  append_store(ckpt, params_);
  return ckpt;
}

template <typename T>
PolicyNetwork<T> PolicyNetwork<T>::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "policy") throw std::runtime_error("checkpoint kind '" + ckpt.kind + "' is not a policy");
  PolicyNetwork net(agent_config_from_json(ckpt.config.at("agent")), ckpt.seed);
  restore_store(net.params_, ckpt);
  return net;
}

void RolloutBatch::append(const RolloutBatch& o) {
  observations.insert(observations.end(), o.observations.begin(), o.observations.end());
  actions.insert(actions.end(), o.actions.begin(), o.actions.end());
  rewards.insert(rewards.end(), o.rewards.begin(), o.rewards.end());
  values.insert(values.end(), o.values.begin(), o.values.end());
  log_probs.insert(log_probs.end(), o.log_probs.begin(), o.log_probs.end());
  episode_end.insert(episode_end.end(), o.episode_end.begin(), o.episode_end.end());
}

void compute_advantages(const RolloutBatch& b, double discount, double lambda, std::vector<double>& advantages,
                        std::vector<double>& returns) {
  const std::size_t n = b.size();
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  double next_adv = 0.0, next_value = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    if (b.episode_end[i]) {
      next_adv = 0.0;
      next_value = 0.0;
    }
    const double delta = b.rewards[i] + discount * next_value - b.values[i];
    next_adv = delta + discount * lambda * next_adv;
    advantages[i] = next_adv;
    returns[i] = next_adv + b.values[i];
    next_value = b.values[i];
  }
}

template <typename T>
ad::Var<T> ppo_loss(const PolicyNetwork<T>& net, const Binder<T>& p, const ad::Matrix<T>& obs,
                    const std::vector<int>& actions, const ad::Matrix<T>& old_log_probs,
                    const ad::Matrix<T>& advantages, const ad::Matrix<T>& returns, const PpoConfig& config,
                    PpoDiagnostics* diag) {
  ad::Tape<T>& tape = p.tape();
  const auto out = net.forward(p, tape.constant(obs));
  const auto log_probs = ad::log_softmax_rows(out.logits);
  const auto ratio = ad::exp(ad::sub(ad::pick(log_probs, actions), tape.constant(old_log_probs)));
  const auto adv = tape.constant(advantages);
  const auto clipped = ad::clamp(ratio, static_cast<T>(1.0 - config.clip), static_cast<T>(1.0 + config.clip));
  const auto surrogate = ad::mean(ad::minimum(ad::mul(ratio, adv), ad::mul(clipped, adv)));
  const auto value_err = ad::mean(ad::square(ad::sub(out.value, tape.constant(returns))));
  const auto entropy = ad::scale(ad::mean(ad::row_sum(ad::mul(ad::softmax_rows(out.logits), log_probs))), T(-1));
  const auto total = ad::sub(ad::add(ad::scale(surrogate, T(-1)), ad::scale(value_err, static_cast<T>(config.value_coef))),
                             ad::scale(entropy, static_cast<T>(config.entropy_coef)));
  if (diag) {
    const auto& r = ratio.value();
    diag->policy_loss += -static_cast<double>(surrogate.value()(0, 0));
    diag->value_loss += static_cast<double>(value_err.value()(0, 0));
    diag->entropy += static_cast<double>(entropy.value()(0, 0));
    diag->mean_ratio += static_cast<double>(r.mean());
    Eigen::Index clipped_n = 0;
    for (Eigen::Index i = 0; i < r.size(); ++i)
      if (std::abs(static_cast<double>(r(i)) - 1.0) > config.clip) ++clipped_n;
    diag->clip_fraction += static_cast<double>(clipped_n) / static_cast<double>(r.size());
    ++diag->updates;
  }
  return total;
}

PpoDiagnostics ppo_update(PolicyNetwork<float>& net, Adam<float>& optimizer, const RolloutBatch& batch,
                          const PpoConfig& config, std::mt19937_64& rng) {
  const std::size_t n = batch.size();
  if (n < 2) throw std::invalid_argument("policy update needs at least two transitions");
  std::vector<double> adv, ret;
  compute_advantages(batch, config.discount, config.gae_lambda, adv, ret);
  if (config.normalize_advantages) {
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (double& a : adv) a = (a - mean) / (sd + 1e-8);
  }
  const auto width = static_cast<Eigen::Index>(batch.observations.front().size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto mb = static_cast<std::size_t>(std::max(1, config.minibatch));
  PpoDiagnostics diag;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += mb) {
      const std::size_t end = std::min(n, start + mb);
      const auto rows = static_cast<Eigen::Index>(end - start);
      ad::Matrix<float> obs(rows, width), old_lp(rows, 1), a(rows, 1), r(rows, 1);
      std::vector<int> acts(static_cast<std::size_t>(rows));
      for (Eigen::Index i = 0; i < rows; ++i) {
        const std::size_t k = order[start + static_cast<std::size_t>(i)];
        for (Eigen::Index c = 0; c < width; ++c)
          obs(i, c) = static_cast<float>(batch.observations[k][static_cast<std::size_t>(c)]);
        old_lp(i, 0) = static_cast<float>(batch.log_probs[k]);
        a(i, 0) = static_cast<float>(adv[k]);
        r(i, 0) = static_cast<float>(ret[k]);
        acts[static_cast<std::size_t>(i)] = batch.actions[k];
      }
      net.parameters().zero_grad();
      ad::Tape<float> tape;
      const Binder<float> p(tape, net.parameters());
      tape.backward(ppo_loss(net, p, obs, acts, old_lp, a, r, config, &diag));
      clip_grad_norm(net.parameters(), config.max_grad_norm);
      optimizer.step(net.parameters());
    }
  }
  if (diag.updates > 0) {
    const double u = diag.updates;
    diag.policy_loss /= u;
    diag.value_loss /= u;
    diag.entropy /= u;
    diag.mean_ratio /= u;
    diag.clip_fraction /= u;
  }
  return diag;
}

int sample_action(const std::vector<double>& probs, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    acc += probs[a];
    if (u < acc) return static_cast<int>(a);
  }
  // Rounding left the total just under u: take the last action with mass.
  for (std::size_t a = probs.size(); a-- > 0;)
    if (probs[a] > 0.0) return static_cast<int>(a);
  return 0;
}

int greedy_action(const std::vector<double>& probs) {
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

template class PolicyNetwork<float>;
template class PolicyNetwork<double>;
template ad::Var<float> ppo_loss(const PolicyNetwork<float>&, const Binder<float>&, const ad::Matrix<float>&,
                                 const std::vector<int>&, const ad::Matrix<float>&, const ad::Matrix<float>&,
                                 const ad::Matrix<float>&, const PpoConfig&, PpoDiagnostics*);
template ad::Var<double> ppo_loss(const PolicyNetwork<double>&, const Binder<double>&, const ad::Matrix<double>&,
                                  const std::vector<int>&, const ad::Matrix<double>&, const ad::Matrix<double>&,
                                  const ad::Matrix<double>&, const PpoConfig&, PpoDiagnostics*);

}  // namespace mansy::rl
