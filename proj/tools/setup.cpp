#include "setup.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mansy::cli {

std::vector<std::filesystem::path> csv_files(const std::filesystem::path& dir_or_file) {
  if (std::filesystem::is_regular_file(dir_or_file)) return {dir_or_file};
  if (!std::filesystem::is_directory(dir_or_file))
    throw std::runtime_error("no such file or directory: " + dir_or_file.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir_or_file))
    if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error("no CSV files in " + dir_or_file.string());
  return out;
}

namespace {

std::pair<double, double> pair_of(const KeyValueConfig& c, const std::string& key, std::pair<double, double> fallback) {
  const auto v = c.get_doubles(key, {fallback.first, fallback.second});
  if (v.size() != 2) throw std::runtime_error("config key '" + key + "' needs two values");
  return {v[0], v[1]};
}

}  // namespace

VideoSetup VideoSetup::from_config(const KeyValueConfig& c) {
  VideoSetup s;
  const auto [rows, cols] = pair_of(c, "grid", {8, 8});
  const auto [w, h] = pair_of(c, "frame", {1920, 960});
  s.grid = {static_cast<int>(rows), static_cast<int>(cols), w, h};
  s.grid.validate();
  s.ladder.rungs = c.get_doubles("ladder", s.ladder.rungs);
  s.ladder.validate();
  s.chunk_duration = c.get_double("chunk_duration", 1.0);
  s.sim.buffer_cap = c.get_double("buffer_cap", s.sim.buffer_cap);
  s.sim.scale = c.get_double("scale", s.sim.scale);
  s.sim.history = c.get_int("k", s.sim.history);
  const auto [fw, fh] = pair_of(c, "fov", {0.33, 0.33});
  s.fov = {fw, fh};
  s.fov.validate();
  s.forecast_history = c.get_int("forecast_history", 5);
  return s;
}

vp::PredictorConfig predictor_config(const KeyValueConfig& c) {
  vp::PredictorConfig p;
  p.io_heads = c.get_int("io_heads", p.io_heads);
  p.embed_dim = c.get_int("embed_dim", p.embed_dim);
  p.attention_heads = c.get_int("attention_heads", p.attention_heads);
  p.key_dim = c.get_int("key_dim", p.key_dim);
  p.value_dim = c.get_int("value_dim", p.value_dim);
  p.blocks = c.get_int("blocks", p.blocks);
  p.history_len = c.get_int("history_len", p.history_len);
  p.horizon_len = c.get_int("horizon_len", p.horizon_len);
  p.ffn_width = c.get_int("ffn_width", p.ffn_width);
  p.validate();
  return p;
}

vp::TrainOptions vp_train_options(const KeyValueConfig& c, std::uint64_t seed) {
  vp::TrainOptions o;
  o.epochs = c.get_int("epochs", o.epochs);
  o.batch_size = c.get_int("batch_size", o.batch_size);
  o.steps_per_epoch = c.get_int("steps_per_epoch", o.steps_per_epoch);
  o.learning_rate = c.get_double("learning_rate", o.learning_rate);
  o.clip_norm = c.get_double("clip_norm", o.clip_norm);
  o.patience = c.get_int("patience", o.patience);
  o.seed = seed;
  return o;
}

rl::TrainingConfig training_config(const KeyValueConfig& c, const VideoSetup& video, std::uint64_t seed) {
  rl::TrainingConfig t;
  t.alpha = c.get_double("alpha", t.alpha);
  t.iterations = c.get_int("iterations", t.iterations);
  t.preference_batch = c.get_int("preference_batch", t.preference_batch);
  t.episodes_per_preference = c.get_int("episodes_per_preference", t.episodes_per_preference);
  t.ppo.entropy_coef = c.get_double("entropy_coef", t.ppo.entropy_coef);
  t.ppo.discount = c.get_double("discount", t.ppo.discount);
  t.ppo.gae_lambda = c.get_double("gae_lambda", t.ppo.gae_lambda);
  t.ppo.clip = c.get_double("clip", t.ppo.clip);
  t.ppo.epochs = c.get_int("ppo_epochs", t.ppo.epochs);
  t.ppo.minibatch = c.get_int("minibatch", t.ppo.minibatch);
  t.ppo.learning_rate = c.get_double("learning_rate", t.ppo.learning_rate);
  t.ppo.max_grad_norm = c.get_double("max_grad_norm", t.ppo.max_grad_norm);
  t.identifier.learning_rate = c.get_double("identifier_lr", t.identifier.learning_rate);
  t.identifier.epochs = c.get_int("identifier_epochs", t.identifier.epochs);
  t.identifier.minibatch = c.get_int("identifier_minibatch", t.identifier.minibatch);
  t.agent = rl::AgentConfig::streaming(video.grid.tile_count(), static_cast<int>(video.ladder.size()),
                                       video.sim.history);
  t.agent.feature_width = c.get_int("feature_width", t.agent.feature_width);
  t.agent.hidden_width = c.get_int("hidden_width", t.agent.hidden_width);
  t.seed = seed;
  t.validate();
  return t;
}

std::vector<FamilyTraces> load_viewport_dir(const std::filesystem::path& dir, const TileGrid& frame) {
  std::vector<FamilyTraces> out;
  for (const auto& f : csv_files(dir)) out.push_back({f.stem().string(), load_viewport_csv(f, frame)});
  return out;
}

std::vector<rl::Environment*> StreamingWorld::environments() const {
  std::vector<rl::Environment*> out;
  for (const auto& e : owned) out.push_back(e.get());
  return out;
}

StreamingWorld build_world(const VideoSetup& video, const std::filesystem::path& manifests,
                           const std::filesystem::path& bandwidth, const std::filesystem::path& viewports,
                           const std::filesystem::path& vp_checkpoint) {
  std::vector<ViewportTrace> viewers;
  for (auto& fam : load_viewport_dir(viewports, video.grid))
    for (auto& t : fam.traces) viewers.push_back(std::move(t));
  if (viewers.empty()) throw std::runtime_error("no viewport traces in " + viewports.string());

  rl::HistoryForecaster forecast;
  int history = video.forecast_history;
  if (vp_checkpoint.empty()) {
    forecast = rl::last_position_forecaster(1);
  } else {
    auto model = std::make_shared<const vp::MtioTransformer<float>>(
        vp::MtioTransformer<float>::from_checkpoint(load_checkpoint(vp_checkpoint)));
    if (model->frame().video_width != video.grid.video_width ||
        model->frame().video_height != video.grid.video_height)
      throw std::runtime_error("predictor checkpoint was trained on a different frame size");
    history = model->config().history_len;
    forecast = rl::mtio_forecaster(model);
  }

  StreamingWorld world;
  std::size_t next_viewer = 0;
  for (const auto& mpath : csv_files(manifests)) {
    const VideoManifest manifest = load_manifest(mpath, video.grid, video.ladder, video.chunk_duration);
    for (const auto& bpath : csv_files(bandwidth)) {
      const ViewportTrace& viewer = viewers[next_viewer++ % viewers.size()];
      const double dt = viewer.trajectory.timestep_duration;
      const int per_chunk = static_cast<int>(std::lround(video.chunk_duration / dt));
      if (per_chunk <= 0) throw std::runtime_error("viewport sampling is slower than one sample per chunk");
      auto masks = rl::chunk_masks(viewer.trajectory, per_chunk, manifest.chunks(), history, forecast, video.fov,
                                   video.grid);
      const std::string name = mpath.stem().string() + ":" + bpath.stem().string() + ":u" +
                               std::to_string(viewer.user_id);
      world.owned.push_back(std::make_unique<rl::StreamingEnvironment>(
          name, Simulator(manifest, load_bandwidth(bpath), video.sim), std::move(masks)));
    }
  }
  return world;
}

}  // namespace mansy::cli
