#include "mansy/orchestrator.hpp"

#include "mansy/csv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mansy::rl {

// ---------------------------------------------------------------------------
// Forecasters and masks

HistoryForecaster last_position_forecaster(int horizon) {
  if (horizon <= 0) throw std::invalid_argument("forecast horizon must be positive");
  return [horizon](const std::vector<Trajectory>& histories) {
    std::vector<Trajectory> out;
    out.reserve(histories.size());
    for (const auto& h : histories) {
      if (h.empty()) throw std::invalid_argument("cannot forecast from an empty history");
      out.push_back({std::vector<ViewportPoint>(static_cast<std::size_t>(horizon), h.points.back()),
                     h.timestep_duration});
    }
    return out;
  };
}

HistoryForecaster mtio_forecaster(std::shared_ptr<const vp::MtioTransformer<float>> model) {
  if (!model) throw std::invalid_argument("mtio_forecaster: null model");
  return [model](const std::vector<Trajectory>& histories) {
    const auto m = static_cast<std::size_t>(model->config().io_heads);
    std::vector<std::vector<const Trajectory*>> batch;
    batch.reserve(histories.size());
    for (const auto& h : histories) batch.emplace_back(m, &h);
    std::vector<Trajectory> out;
    out.reserve(histories.size());
    for (const auto& set : model->predict_batch(batch)) out.push_back(vp::ensemble(set, model->frame()));
    return out;
  };
}

ChunkMasks chunk_masks(const Trajectory& trajectory, int samples_per_chunk, int chunks, int history_len,
                       const HistoryForecaster& forecast, const FieldOfView& fov, const TileGrid& grid) {
  if (samples_per_chunk <= 0 || chunks <= 0 || history_len <= 0)
    throw std::invalid_argument("chunk_masks: sizes must be positive");
  const auto need = static_cast<std::size_t>(samples_per_chunk) * static_cast<std::size_t>(chunks);
  if (trajectory.size() < need)
    throw std::invalid_argument("trajectory has " + std::to_string(trajectory.size()) + " samples, " +
                                std::to_string(need) + " needed");
  const auto& pts = trajectory.points;
  const auto spc = static_cast<std::size_t>(samples_per_chunk);
  ChunkMasks out;
  std::vector<Trajectory> histories;
  for (int c = 0; c < chunks; ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * spc;
    out.actual.push_back(trajectory_tile_mask(std::span(pts).subspan(begin, spc), fov, grid));
    if (c == 0) continue;
    // Too little history early on: repeat the earliest sample.
    Trajectory h{{}, trajectory.timestep_duration};
    for (int s = history_len; s >= 1; --s) {
      const long idx = static_cast<long>(begin) - s;
      h.points.push_back(pts[static_cast<std::size_t>(std::max(0L, idx))]);
    }
    histories.push_back(std::move(h));
  }
  out.predicted.push_back(viewport_tile_mask(pts.front(), fov, grid));
  if (!histories.empty()) {
    for (const auto& f : forecast(histories)) {
      const std::size_t n = std::min(f.size(), spc);
      if (n == 0) throw std::runtime_error("forecaster returned an empty trajectory");
      out.predicted.push_back(trajectory_tile_mask(std::span(f.points).first(n), fov, grid));
    }
  }
  if (out.predicted.size() != out.actual.size())
    throw std::runtime_error("forecaster returned the wrong number of trajectories");
  return out;
}

// ---------------------------------------------------------------------------
// Environments

StreamingEnvironment::StreamingEnvironment(std::string name, Simulator sim, ChunkMasks masks)
    : name_(std::move(name)),
      sim_(std::move(sim)),
      masks_(std::move(masks)),
      scales_(ObservationScales::for_simulator(sim_)),
      actions_(action_space(sim_.manifest().ladder())) {
  if (masks_.actual.size() != masks_.predicted.size())
    throw std::invalid_argument("predicted and actual masks differ in length");
  if (static_cast<int>(masks_.actual.size()) < sim_.manifest().chunks())
    throw std::invalid_argument("environment '" + name_ + "' has fewer masks than chunks");
  session_ = sim_.start(0.0);
}

int StreamingEnvironment::state_width() const {
  const auto& m = sim_.manifest();
  return AgentConfig::streaming(m.grid().tile_count(), static_cast<int>(m.ladder().size()), sim_.config().history)
      .state_width();
}

const TileMask& StreamingEnvironment::predicted_next() const {
  const auto c = static_cast<std::size_t>(std::min(session_.chunk, sim_.manifest().chunks() - 1));
  return masks_.predicted[c];
}

std::vector<double> StreamingEnvironment::observe() const {
  return encode_state(sim_.observe(session_, predicted_next()), scales_);
}

std::vector<double> StreamingEnvironment::reset(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "stream.offset"));
  const double offset = std::uniform_real_distribution<double>(0.0, sim_.trace().period())(rng);
  session_ = sim_.start(offset);
  records_.clear();
  return observe();
}

StepOutcome StreamingEnvironment::step(int action, const QoEPreference& pref) {
  if (action < 0 || action >= action_count()) throw std::out_of_range("action index out of range");
  const auto c = static_cast<std::size_t>(session_.chunk);
  if (sim_.finished(session_)) throw std::logic_error("episode already finished");
  const StepRecord rec =
      sim_.step(session_, actions_[static_cast<std::size_t>(action)], masks_.predicted[c], masks_.actual[c], pref);
  records_.push_back(rec);
  StepOutcome out;
  out.breakdown = rec.qoe;
  out.raw_qoe = rec.qoe.total;
  out.qoe = rec.qoe.total / sim_.manifest().ladder().max();
  out.r_in = rec.action.r_in;
  out.done = sim_.finished(session_);
  out.state = observe();
  return out;
}

BanditEnvironment::BanditEnvironment(std::vector<std::array<double, 3>> payoffs, int pulls_per_episode)
    : payoffs_(std::move(payoffs)), pulls_(pulls_per_episode) {
  if (payoffs_.empty()) throw std::invalid_argument("bandit needs at least one arm");
  if (pulls_ <= 0) throw std::invalid_argument("bandit episode length must be positive");
}

std::vector<double> BanditEnvironment::reset(std::uint64_t) {
  step_ = 0;
  return {0.0};
}

StepOutcome BanditEnvironment::step(int action, const QoEPreference& pref) {
  if (action < 0 || action >= action_count()) throw std::out_of_range("action index out of range");
  if (step_ >= pulls_) throw std::logic_error("episode already finished");
  const auto w = pref.as_array();
  const auto& pay = payoffs_[static_cast<std::size_t>(action)];
  StepOutcome out;
  out.raw_qoe = w[0] * pay[0] + w[1] * pay[1] + w[2] * pay[2];
  out.qoe = out.raw_qoe;
  ++step_;
  out.done = step_ >= pulls_;
  out.state = {static_cast<double>(step_) / pulls_};
  return out;
}

// ---------------------------------------------------------------------------
// Policies

namespace {
std::vector<double> with_preference(std::vector<double> state, const QoEPreference& pref) {
  for (double w : pref.as_array()) state.push_back(w);
  return state;
}
}  // namespace

int GreedyPolicy::act(const Environment&, const std::vector<double>& observation) {
  return greedy_action(net_.distribution(observation));
}

int SampledPolicy::act(const Environment&, const std::vector<double>& observation) {
  return sample_action(net_.distribution(observation), rng_);
}

int HeuristicPolicy::act(const Environment& env, const std::vector<double>&) {
  const auto* stream = dynamic_cast<const StreamingEnvironment*>(&env);
  if (!stream) throw std::invalid_argument("heuristic policy needs a streaming environment");
  const auto& s = stream->session();
  const BitrateAction a = heuristic_policy(stream->simulator(), s, stream->predicted_next(), harmonic_mean(s.n));
  const auto& acts = stream->actions();
  return static_cast<int>(std::find(acts.begin(), acts.end(), a) - acts.begin());
}

// ---------------------------------------------------------------------------
// Training

void TrainingConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  if (preference_batch <= 0) throw std::invalid_argument("preference_batch must be positive");
  if (episodes_per_preference <= 0) throw std::invalid_argument("episodes_per_preference must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  agent.validate();
}

nlohmann::json to_json(const TrainingConfig& c) {
  return {{"iterations", c.iterations},
          {"preference_batch", c.preference_batch},
          {"episodes_per_preference", c.episodes_per_preference},
          {"alpha", c.alpha},
          {"train_identifier", c.train_identifier},
          {"ppo",
           {{"clip", c.ppo.clip},
            {"discount", c.ppo.discount},
            {"gae_lambda", c.ppo.gae_lambda},
            {"epochs", c.ppo.epochs},
            {"minibatch", c.ppo.minibatch},
            {"value_coef", c.ppo.value_coef},
            {"entropy_coef", c.ppo.entropy_coef},
            {"learning_rate", c.ppo.learning_rate},
            {"max_grad_norm", c.ppo.max_grad_norm},
            {"normalize_advantages", c.ppo.normalize_advantages}}},
          {"identifier",
           {{"learning_rate", c.identifier.learning_rate},
            {"epochs", c.identifier.epochs},
            {"minibatch", c.identifier.minibatch},
            {"adam", c.identifier.adam}}},
          {"agent", to_json(c.agent)},
          {"seed", c.seed}};
}

TrainingConfig training_config_from_json(const nlohmann::json& j) {
  TrainingConfig c;
  c.iterations = j.at("iterations").get<int>();
  c.preference_batch = j.at("preference_batch").get<int>();
  c.episodes_per_preference = j.at("episodes_per_preference").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.train_identifier = j.at("train_identifier").get<bool>();
  const auto& p = j.at("ppo");
  c.ppo.clip = p.at("clip").get<double>();
  c.ppo.discount = p.at("discount").get<double>();
  c.ppo.gae_lambda = p.at("gae_lambda").get<double>();
  c.ppo.epochs = p.at("epochs").get<int>();
  c.ppo.minibatch = p.at("minibatch").get<int>();
  c.ppo.value_coef = p.at("value_coef").get<double>();
  c.ppo.entropy_coef = p.at("entropy_coef").get<double>();
  c.ppo.learning_rate = p.at("learning_rate").get<double>();
  c.ppo.max_grad_norm = p.at("max_grad_norm").get<double>();
  c.ppo.normalize_advantages = p.at("normalize_advantages").get<bool>();
  const auto& i = j.at("identifier");
  c.identifier.learning_rate = i.at("learning_rate").get<double>();
  c.identifier.epochs = i.at("epochs").get<int>();
  c.identifier.minibatch = i.at("minibatch").get<int>();
  c.identifier.adam = i.at("adam").get<bool>();
  c.agent = agent_config_from_json(j.at("agent"));
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

namespace {

void check_setup(const TrainingConfig& config, const std::vector<QoEPreference>& pool,
                 const std::vector<Environment*>& envs) {
  config.validate();
  if (pool.empty()) throw std::invalid_argument("preference pool is empty");
  for (const auto& p : pool) p.validate();
  if (envs.empty()) throw std::invalid_argument("no training environments");
  for (const Environment* e : envs) {
    if (!e) throw std::invalid_argument("null environment");
    if (e->state_width() != config.agent.state_width() || e->action_count() != config.agent.actions)
      throw std::invalid_argument("environment '" + e->name() + "' does not match the agent configuration");
  }
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(std::mt19937_64& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw std::runtime_error("corrupt random generator state in checkpoint");
}

void append_moments(Checkpoint& ckpt, const Adam<float>& opt, const std::string& prefix) {
  const auto put = [&](const std::vector<ad::Matrix<float>>& ms, const std::string& tag) {
    for (std::size_t i = 0; i < ms.size(); ++i) {
      NamedArray a{prefix + tag + std::to_string(i), ms[i].rows(), ms[i].cols(), {}};
      a.data.assign(ms[i].data(), ms[i].data() + ms[i].size());
      ckpt.arrays.push_back(std::move(a));
    }
  };
  put(opt.first_moments(), "m");
  put(opt.second_moments(), "v");
}

void restore_moments(Adam<float>& opt, const Checkpoint& ckpt, const std::string& prefix, std::size_t count,
                     long steps) {
  if (steps == 0) return;
  const auto get = [&](const std::string& tag) {
    std::vector<ad::Matrix<float>> ms;
    for (std::size_t i = 0; i < count; ++i) {
      const NamedArray& a = ckpt.array(prefix + tag + std::to_string(i));
      ms.push_back(Eigen::Map<const ad::Matrix<float>>(a.data.data(), a.rows, a.cols));
    }
    return ms;
  };
  opt.restore(get("m"), get("v"), steps);
}

nlohmann::json diagnostics_json(const IterationDiagnostics& d) {
  nlohmann::json per = nlohmann::json::array();
  for (double q : d.qoe_per_preference) per.push_back(std::isnan(q) ? nlohmann::json(nullptr) : nlohmann::json(q));
  return {{"iteration", d.iteration},
          {"alpha", d.alpha},
          {"mean_reward", d.mean_reward},
          {"mean_qoe", d.mean_qoe},
          {"qoe_per_preference", per},
          {"identifier_mse", d.identifier_mse},
          {"mi_term_mean", d.mi_term_mean},
          {"ppo",
           {d.ppo.policy_loss, d.ppo.value_loss, d.ppo.entropy, d.ppo.mean_ratio, d.ppo.clip_fraction,
            d.ppo.updates}},
          {"env_steps", d.env_steps},
          {"episodes", d.episodes}};
}

IterationDiagnostics diagnostics_from_json(const nlohmann::json& j) {
  IterationDiagnostics d;
  d.iteration = j.at("iteration").get<int>();
  d.alpha = j.at("alpha").get<double>();
  d.mean_reward = j.at("mean_reward").get<double>();
  d.mean_qoe = j.at("mean_qoe").get<double>();
  for (const auto& q : j.at("qoe_per_preference"))
    d.qoe_per_preference.push_back(q.is_null() ? std::nan("") : q.get<double>());
  d.identifier_mse = j.at("identifier_mse").get<double>();
  d.mi_term_mean = j.at("mi_term_mean").get<double>();
  const auto& p = j.at("ppo");
  d.ppo = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>(),
           p.at(3).get<double>(), p.at(4).get<double>(), p.at(5).get<int>()};
  d.env_steps = j.at("env_steps").get<long>();
  d.episodes = j.at("episodes").get<long>();
  return d;
}

}  // namespace

Trainer::Trainer(TrainingConfig config, std::vector<QoEPreference> pool, std::vector<Environment*> envs)
    : config_(std::move(config)),
      pool_(std::move(pool)),
      envs_(std::move(envs)),
      agent_(config_.agent, derive_seed(config_.seed, "agent")),
      identifier_(IdentifierConfig::matching(config_.agent), derive_seed(config_.seed, "identifier")),
      agent_opt_(Adam<float>::Options{config_.ppo.learning_rate}),
      identifier_opt_(Adam<float>::Options{config_.identifier.learning_rate}),
      rollout_rng_(derive_seed(config_.seed, "rollout")),
      identifier_rng_(derive_seed(config_.seed, "identifier.batches")),
      ppo_rng_(derive_seed(config_.seed, "ppo.batches")) {
  check_setup(config_, pool_, envs_);
}

void Trainer::run_iteration() {
  std::vector<std::size_t> order(pool_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rollout_rng_);
  order.resize(std::min(order.size(), static_cast<std::size_t>(config_.preference_batch)));

  RolloutBatch batch;
  IdentifierSamples samples;
  std::vector<double> qoe;
  IterationDiagnostics diag;
  diag.iteration = iteration();
  diag.alpha = config_.alpha;
  diag.qoe_per_preference.assign(pool_.size(), std::nan(""));
  std::uniform_int_distribution<std::size_t> pick_env(0, envs_.size() - 1);

  for (const std::size_t pi : order) {
    const QoEPreference& pref = pool_[pi];
    double pref_sum = 0.0;
    long pref_steps = 0;
    for (int ep = 0; ep < config_.episodes_per_preference; ++ep) {
      Environment& env = *envs_[pick_env(rollout_rng_)];
      std::vector<double> state = env.reset(rollout_rng_());
      bool done = false;
      while (!done) {
        const auto obs = with_preference(state, pref);
        const auto probs = agent_.distribution(obs);
        const int a = sample_action(probs, rollout_rng_);
        const double v = agent_.value(obs);
        StepOutcome out = env.step(a, pref);
        done = out.done;
        batch.observations.push_back(obs);
        batch.actions.push_back(a);
        batch.values.push_back(v);
        batch.log_probs.push_back(std::log(std::max(probs[static_cast<std::size_t>(a)], 1e-12)));
        batch.episode_end.push_back(done ? 1 : 0);
        samples.states.push_back(std::move(state));
        samples.actions.push_back(a);
        samples.prefs.push_back(pref);
        qoe.push_back(out.qoe);
        pref_sum += out.raw_qoe;
        ++pref_steps;
        state = std::move(out.state);
      }
      ++diag.episodes;
    }
    diag.qoe_per_preference[pi] = pref_sum / static_cast<double>(pref_steps);
  }

  if (config_.train_identifier)
    update_identifier(identifier_, identifier_opt_, samples, config_.identifier, identifier_rng_);

  const auto width = static_cast<Eigen::Index>(config_.agent.state_width());
  ad::Matrix<float> states(static_cast<Eigen::Index>(samples.size()), width);
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (Eigen::Index c = 0; c < width; ++c)
      states(static_cast<Eigen::Index>(i), c) = static_cast<float>(samples.states[i][static_cast<std::size_t>(c)]);
  const ad::Matrix<float> identified = identifier_.identify_batch(states, samples.actions);

  double sq = 0.0, mi_sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const IdentifiedPreference guess{identified(r, 0), identified(r, 1), identified(r, 2)};
    const auto truth = samples.prefs[i].as_array();
    for (int k = 0; k < 3; ++k) sq += (guess[static_cast<std::size_t>(k)] - truth[static_cast<std::size_t>(k)]) *
                                      (guess[static_cast<std::size_t>(k)] - truth[static_cast<std::size_t>(k)]);
    const double mi = mi_reward_term(samples.prefs[i], guess);
    mi_sum += mi;
    batch.rewards.push_back(combined_reward(qoe[i], mi, config_.alpha));
  }
  const double n = static_cast<double>(samples.size());
  diag.identifier_mse = sq / (3.0 * n);
  diag.mi_term_mean = mi_sum / n;
  diag.mean_reward = std::accumulate(batch.rewards.begin(), batch.rewards.end(), 0.0) / n;
  double raw = 0.0;
  for (std::size_t pi : order) raw += diag.qoe_per_preference[pi];
  diag.mean_qoe = raw / static_cast<double>(order.size());
  diag.env_steps = static_cast<long>(samples.size());

  diag.ppo = ppo_update(agent_, agent_opt_, batch, config_.ppo, ppo_rng_);
  diagnostics_.push_back(std::move(diag));
  last_rollout_ = std::move(batch);
}

void Trainer::run(int iterations) {
  for (int i = 0; i < iterations; ++i) run_iteration();
}

Checkpoint Trainer::save() const {
  Checkpoint ckpt;
  ckpt.kind = "trainer";
  ckpt.seed = config_.seed;
  nlohmann::json diags = nlohmann::json::array();
  for (const auto& d : diagnostics_) diags.push_back(diagnostics_json(d));
  nlohmann::json pool = nlohmann::json::array();
  for (const auto& p : pool_) pool.push_back(p.as_array());
  ckpt.config = {{"training", to_json(config_)},
                 {"pool", pool},
                 {"rng", {rng_state(rollout_rng_), rng_state(identifier_rng_), rng_state(ppo_rng_)}},
                 {"agent_opt_steps", agent_opt_.steps()},
                 {"identifier_opt_steps", identifier_opt_.steps()},
                 {"diagnostics", diags}};
  append_store(ckpt, agent_.parameters(), "agent/");
  append_store(ckpt, identifier_.parameters(), "identifier/");
  append_moments(ckpt, agent_opt_, "agent_opt/");
  append_moments(ckpt, identifier_opt_, "identifier_opt/");
  return ckpt;
}

Trainer Trainer::resume(const Checkpoint& ckpt, std::vector<QoEPreference> pool, std::vector<Environment*> envs) {
  if (ckpt.kind != "trainer") throw std::runtime_error("checkpoint kind '" + ckpt.kind + "' is not a trainer");
  const auto& j = ckpt.config;
  const auto& saved_pool = j.at("pool");
  if (saved_pool.size() != pool.size()) throw std::invalid_argument("preference pool differs from the checkpoint");
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (saved_pool[i].get<std::array<double, 3>>() != pool[i].as_array())
      throw std::invalid_argument("preference pool differs from the checkpoint");

  Trainer t(training_config_from_json(j.at("training")), std::move(pool), std::move(envs));
  restore_store(t.agent_.parameters(), ckpt, "agent/");
  restore_store(t.identifier_.parameters(), ckpt, "identifier/");
  restore_moments(t.agent_opt_, ckpt, "agent_opt/", t.agent_.parameters().entries().size(),
                  j.at("agent_opt_steps").get<long>());
  restore_moments(t.identifier_opt_, ckpt, "identifier_opt/", t.identifier_.parameters().entries().size(),
                  j.at("identifier_opt_steps").get<long>());
  const auto& rng = j.at("rng");
  set_rng_state(t.rollout_rng_, rng.at(0).get<std::string>());
  set_rng_state(t.identifier_rng_, rng.at(1).get<std::string>());
  set_rng_state(t.ppo_rng_, rng.at(2).get<std::string>());
  for (const auto& d : j.at("diagnostics")) t.diagnostics_.push_back(diagnostics_from_json(d));
  return t;
}

TrainingResult run_training(const TrainingConfig& config, const std::vector<QoEPreference>& pool,
                            const std::vector<Environment*>& envs) {
  Trainer t(config, pool, envs);
  t.run(config.iterations);
  return {t.agent(), t.identifier(), t.diagnostics()};
}

TrainingResult run_ablation_no_repl(TrainingConfig config, const std::vector<QoEPreference>& pool,
                                    const std::vector<Environment*>& envs) {
  config.alpha = 0.0;
  config.train_identifier = false;
  return run_training(config, pool, envs);
}

std::string diagnostics_csv(const std::vector<IterationDiagnostics>& diagnostics) {
  std::string out = "iter,identifier_mse,mi_term_mean,alpha,mean_reward,mean_qoe,entropy,clip_fraction,env_steps\n";
  for (const auto& d : diagnostics) {
    out += std::to_string(d.iteration) + "," + csv::format(d.identifier_mse) + "," + csv::format(d.mi_term_mean) +
           "," + csv::format(d.alpha) + "," + csv::format(d.mean_reward) + "," + csv::format(d.mean_qoe) + "," +
           csv::format(d.ppo.entropy) + "," + csv::format(d.ppo.clip_fraction) + "," + std::to_string(d.env_steps) +
           "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  if (!(q >= 0.0 && q <= 100.0)) throw std::invalid_argument("percentile rank must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

template <typename OnStep>
void evaluate_episodes(Policy& policy, const std::vector<QoEPreference>& prefs, const std::vector<Environment*>& envs,
                       std::uint64_t seed, OnStep&& on_step) {
  for (std::size_t pi = 0; pi < prefs.size(); ++pi) {
    prefs[pi].validate();
    for (std::size_t ei = 0; ei < envs.size(); ++ei) {
      Environment& env = *envs[ei];
      std::vector<double> state = env.reset(derive_seed(seed, "eval.env" + std::to_string(ei)));
      bool done = false;
      while (!done) {
        const auto obs = with_preference(state, prefs[pi]);
        const int a = policy.act(env, obs);
        StepOutcome out = env.step(a, prefs[pi]);
        done = out.done;
        on_step(pi, ei, state, a, out);
        state = std::move(out.state);
      }
    }
  }
}

}  // namespace

std::vector<EvaluationRow> run_evaluation(Policy& policy, const std::vector<QoEPreference>& prefs,
                                          const std::vector<Environment*>& envs, std::uint64_t seed,
                                          const EpisodeObserver& on_episode) {
  std::vector<EvaluationRow> rows;
  std::vector<double> scores;
  const auto flush = [&](EvaluationRow& row) {
    const double n = static_cast<double>(row.chunks);
    row.qoe_mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
    row.qoe_p10 = percentile(scores, 10.0);
    row.qoe_p50 = percentile(scores, 50.0);
    row.qoe_p90 = percentile(scores, 90.0);
    row.q1_mean /= n;
    row.q2_mean /= n;
    row.q3_mean /= n;
    row.r_in_mean /= n;
    scores.clear();
  };
  bool open = false;
  evaluate_episodes(policy, prefs, envs, seed,
                    [&](std::size_t pi, std::size_t ei, const std::vector<double>&, int, const StepOutcome& out) {
                      if (!open) {
                        EvaluationRow row;
                        row.preference_index = pi;
                        row.preference = prefs[pi];
                        row.trace = envs[ei]->name();
                        rows.push_back(row);
                        open = true;
                      }
                      EvaluationRow& row = rows.back();
                      ++row.chunks;
                      scores.push_back(out.raw_qoe);
                      row.q1_mean += out.breakdown.q1;
                      row.q2_mean += out.breakdown.q2;
                      row.q3_mean += out.breakdown.q3;
                      row.r_in_mean += out.r_in;
                      row.rebuffer_total += out.breakdown.q3;
                      if (out.done) {
                        flush(row);
                        open = false;
                        if (on_episode) on_episode(pi, *envs[ei]);
                      }
                    });
  return rows;
}

IdentifierSamples collect_samples(Policy& policy, const std::vector<QoEPreference>& prefs,
                                  const std::vector<Environment*>& envs, std::uint64_t seed) {
  IdentifierSamples samples;
  evaluate_episodes(policy, prefs, envs, seed,
                    [&](std::size_t pi, std::size_t, const std::vector<double>& state, int a, const StepOutcome&) {
                      samples.states.push_back(state);
                      samples.actions.push_back(a);
                      samples.prefs.push_back(prefs[pi]);
                    });
  return samples;
}

std::string evaluation_csv(const std::vector<EvaluationRow>& rows) {
  std::string out =
      "preference,lambda1,lambda2,lambda3,trace,chunks,qoe_mean,qoe_p10,qoe_p50,qoe_p90,q1_mean,q2_mean,q3_mean,"
      "r_in_mean,rebuffer_total\n";
  for (const auto& r : rows) {
    out += r.preference.label() + "," + csv::format6(r.preference.lambda1) + "," + csv::format6(r.preference.lambda2) +
           "," + csv::format6(r.preference.lambda3) + "," + r.trace + "," + std::to_string(r.chunks) + "," +
           csv::format6(r.qoe_mean) + "," + csv::format6(r.qoe_p10) + "," + csv::format6(r.qoe_p50) + "," +
           csv::format6(r.qoe_p90) + "," + csv::format6(r.q1_mean) + "," + csv::format6(r.q2_mean) + "," +
           csv::format6(r.q3_mean) + "," + csv::format6(r.r_in_mean) + "," + csv::format6(r.rebuffer_total) + "\n";
  }
  return out;
}

}  // namespace mansy::rl
