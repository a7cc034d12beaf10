#pragma once

// Windowing of viewport traces, predictor training and IoU evaluation.

#include "mansy/geometry.hpp"
#include "mansy/vp_model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mansy::vp {

struct Window {
  Trajectory history;
  Trajectory future;
  std::string family;
};

struct WindowedDataset {
  std::vector<Window> windows;

  std::size_t size() const { return windows.size(); }
  bool empty() const { return windows.empty(); }
  void append(const WindowedDataset& other);
};

/// Slides a (history_len + horizon_len) window over each trajectory with the
/// given stride.
WindowedDataset make_windows(const std::vector<Trajectory>& trajectories, const std::string& family, int history_len,
                             int horizon_len, int stride);

struct TrainOptions {
  int epochs = 50;
  int batch_size = 64;
  int steps_per_epoch = 0;   ///< 0: ceil(windows / batch_size)
  double learning_rate = 1e-4;
  double clip_norm = 1.0;
  int patience = 10;         ///< epochs without validation improvement before stopping
  std::uint64_t seed = 0;
};

struct TrainResult {
  MtioTransformer<float> model;
  std::vector<double> train_loss;       ///< mean per-batch loss of each epoch
  std::vector<double> validation_loss;  ///< empty without a validation set
  int best_epoch = -1;
};

/// Each batch item feeds every input head its own randomly drawn window and
/// scores every output head against that window's future. With a validation
/// set, training stops after `patience` epochs without improvement and the
/// best parameters are returned.
TrainResult train(const WindowedDataset& data, const PredictorConfig& config, const TileGrid& frame,
                  const TrainOptions& options, const WindowedDataset* validation = nullptr);

/// Loss with each window's history copied to every head, averaged over windows.
double validation_loss(const MtioTransformer<float>& model, const WindowedDataset& data, int batch_size = 256);

/// Returns one PredictionSet per window.
using BatchForecaster = std::function<std::vector<PredictionSet>(const std::vector<const Window*>&)>;

BatchForecaster forecaster(const MtioTransformer<float>& model);

struct AccuracyReport {
  std::vector<double> ensemble;          ///< mean IoU per horizon step
  std::vector<std::vector<double>> heads;  ///< [head][step]
  std::size_t windows = 0;

  double ensemble_mean() const;
  double head_mean(std::size_t head) const;
};

/// Per horizon step, mean IoU between the viewport mask of the predicted point
/// and that of the true point, for the ensemble and for each head alone.
AccuracyReport evaluate_accuracy(const BatchForecaster& predict, const WindowedDataset& data,
                                 const FieldOfView& fov, const TileGrid& grid, int batch_size = 256);

/// CSV `family,horizon_step,mean_iou` over labelled reports.
std::string accuracy_csv(const std::vector<std::pair<std::string, AccuracyReport>>& reports);

}  // namespace mansy::vp
