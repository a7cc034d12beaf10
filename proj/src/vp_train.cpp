#include "mansy/vp_train.hpp"

#include "mansy/csv.hpp"
#include "mansy/optim.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mansy::vp {

void WindowedDataset::append(const WindowedDataset& other) {
  windows.insert(windows.end(), other.windows.begin(), other.windows.end());
}

WindowedDataset make_windows(const std::vector<Trajectory>& trajectories, const std::string& family, int history_len,
                             int horizon_len, int stride) {
  if (history_len < 1 || horizon_len < 1 || stride < 1)
    throw std::invalid_argument("window lengths and stride must be positive");
  WindowedDataset ds;
  const auto span = static_cast<std::size_t>(history_len + horizon_len);
  for (const auto& tr : trajectories) {
    for (std::size_t start = 0; start + span <= tr.points.size(); start += static_cast<std::size_t>(stride)) {
      Window w;
      w.family = family;
      w.history.timestep_duration = w.future.timestep_duration = tr.timestep_duration;
      w.history.points.assign(tr.points.begin() + static_cast<std::ptrdiff_t>(start),
                              tr.points.begin() + static_cast<std::ptrdiff_t>(start) + history_len);
      w.future.points.assign(tr.points.begin() + static_cast<std::ptrdiff_t>(start) + history_len,
                             tr.points.begin() + static_cast<std::ptrdiff_t>(start + span));
      ds.windows.push_back(std::move(w));
    }
  }
  return ds;
}

namespace {

// One training batch: row block b holds the M histories of item b; targets[j]
// holds the M futures at step j.
struct Batch {
  ad::Matrix<float> history;
  std::vector<ad::Matrix<float>> targets;
};

Batch assemble(const MtioTransformer<float>& model, const std::vector<std::vector<const Window*>>& items) {
  const auto& c = model.config();
  Batch b;
  const auto rows = static_cast<Eigen::Index>(items.size());
  b.history.resize(rows * c.history_len, 2 * c.io_heads);
  b.targets.assign(static_cast<std::size_t>(c.horizon_len), ad::Matrix<float>(rows, 2 * c.io_heads));
  std::vector<const Trajectory*> hist, fut;
  for (Eigen::Index r = 0; r < rows; ++r) {
    hist.clear();
    fut.clear();
    for (const Window* w : items[static_cast<std::size_t>(r)]) {
      hist.push_back(&w->history);
      fut.push_back(&w->future);
    }
    b.history.middleRows(r * c.history_len, c.history_len) = model.encode_histories(hist);
    for (int j = 0; j < c.horizon_len; ++j) b.targets[static_cast<std::size_t>(j)].row(r) = model.encode_targets(fut, j);
  }
  return b;
}

double batch_loss(const MtioTransformer<float>& model, const Batch& b, ParameterStore<float>* trainable) {
  ad::Tape<float> tape;
  if (trainable) {
    const Binder<float> p(tape, *trainable);
    const auto loss = model.loss(model.forward(p, b.history), b.targets);
    tape.backward(loss);
    return static_cast<double>(loss.value()(0, 0));
  }
  const Binder<float> p(tape, model.parameters());
  return static_cast<double>(model.loss(model.forward(p, b.history), b.targets).value()(0, 0));
}

}  // namespace

double validation_loss(const MtioTransformer<float>& model, const WindowedDataset& data, int batch_size) {
  if (data.empty()) throw std::invalid_argument("validation set is empty");
  const auto m = static_cast<std::size_t>(model.config().io_heads);
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::vector<const Window*>> items;
    for (std::size_t i = start; i < end; ++i) items.emplace_back(m, &data.windows[i]);
    total += batch_loss(model, assemble(model, items), nullptr) * static_cast<double>(end - start);
  }
  return total / static_cast<double>(data.size());
}

TrainResult train(const WindowedDataset& data, const PredictorConfig& config, const TileGrid& frame,
                  const TrainOptions& options, const WindowedDataset* validation) {
  if (data.empty()) throw std::invalid_argument("training set is empty");
  if (options.batch_size < 1 || options.epochs < 0) throw std::invalid_argument("invalid training options");
  TrainResult result{MtioTransformer<float>(config, frame, options.seed), {}, {}, -1};
  auto& model = result.model;
  Adam<float> opt({options.learning_rate});
  std::mt19937_64 rng(derive_seed(options.seed, "vp-train.sampler"));
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const int steps = options.steps_per_epoch > 0
                        ? options.steps_per_epoch
                        : static_cast<int>((data.size() + static_cast<std::size_t>(options.batch_size) - 1) /
                                           static_cast<std::size_t>(options.batch_size));
  const auto m = static_cast<std::size_t>(config.io_heads);

  ParameterStore<float> best;
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    double sum = 0.0;
    for (int s = 0; s < steps; ++s) {
      std::vector<std::vector<const Window*>> items(static_cast<std::size_t>(options.batch_size));
      for (auto& heads : items)
        for (std::size_t i = 0; i < m; ++i) heads.push_back(&data.windows[pick(rng)]);
      model.parameters().zero_grad();
      sum += batch_loss(model, assemble(model, items), &model.parameters());
      clip_grad_norm(model.parameters(), options.clip_norm);
      opt.step(model.parameters());
    }
    result.train_loss.push_back(sum / steps);
    if (validation) {
      const double v = validation_loss(model, *validation);
      result.validation_loss.push_back(v);
      if (v < best_val) {
        best_val = v;
        best = model.parameters();
        result.best_epoch = epoch;
        stale = 0;
      } else if (++stale >= options.patience) {
        break;
      }
    }
  }
  if (validation && result.best_epoch >= 0) model.parameters() = best;
  return result;
}

BatchForecaster forecaster(const MtioTransformer<float>& model) {
  return [&model](const std::vector<const Window*>& windows) {
    const auto m = static_cast<std::size_t>(model.config().io_heads);
    std::vector<std::vector<const Trajectory*>> batch;
    for (const Window* w : windows) batch.emplace_back(m, &w->history);
    return model.predict_batch(batch);
  };
}

double AccuracyReport::ensemble_mean() const {
  return ensemble.empty() ? 0.0 : std::accumulate(ensemble.begin(), ensemble.end(), 0.0) / ensemble.size();
}

double AccuracyReport::head_mean(std::size_t head) const {
  const auto& h = heads.at(head);
  return h.empty() ? 0.0 : std::accumulate(h.begin(), h.end(), 0.0) / h.size();
}

AccuracyReport evaluate_accuracy(const BatchForecaster& predict, const WindowedDataset& data, const FieldOfView& fov,
                                 const TileGrid& grid, int batch_size) {
  AccuracyReport rep;
  rep.windows = data.size();
  if (data.empty()) return rep;
  const std::size_t steps = data.windows.front().future.size();
  rep.ensemble.assign(steps, 0.0);
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Window*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&data.windows[i]);
    const auto preds = predict(chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto& truth = chunk[i]->future.points;
      const auto& set = preds[i];
      if (rep.heads.empty()) rep.heads.assign(set.trajectories.size(), std::vector<double>(steps, 0.0));
      const Trajectory mean = ensemble(set, grid);
      for (std::size_t j = 0; j < steps; ++j) {
        const auto actual = viewport_tile_mask(truth[j], fov, grid);
        rep.ensemble[j] += iou(viewport_tile_mask(mean.points[j], fov, grid), actual);
        for (std::size_t h = 0; h < set.trajectories.size(); ++h)
          rep.heads[h][j] += iou(viewport_tile_mask(set.trajectories[h].points[j], fov, grid), actual);
      }
    }
  }
  const double n = static_cast<double>(data.size());
  for (auto& v : rep.ensemble) v /= n;
  for (auto& h : rep.heads)
    for (auto& v : h) v /= n;
  return rep;
}

std::string accuracy_csv(const std::vector<std::pair<std::string, AccuracyReport>>& reports) {
  std::string out = "family,horizon_step,mean_iou\n";
  for (const auto& [family, rep] : reports)
    for (std::size_t j = 0; j < rep.ensemble.size(); ++j)
      out += family + "," + std::to_string(j + 1) + "," + csv::format6(rep.ensemble[j]) + "\n";
  return out;
}

}  // namespace mansy::vp
