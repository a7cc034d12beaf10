#pragma once

// Synthetic viewport and bandwidth generators plus the viewport CSV format.

#include "mansy/geometry.hpp"
#include "mansy/simenv.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mansy {

/// Viewing-pattern generator parameters. Distances are in pixels per sample.
struct PatternFamily {
  std::string name = "focus";   ///< "focus" or "explore"
  // focus: Ornstein-Uhlenbeck jitter around a per-user center near the frame middle
  double reversion = 0.2;
  double noise = 15.0;
  double center_spread = 80.0;
  // explore: horizontal drift with random stops
  double drift = 60.0;
  double drift_jitter = 0.5;    ///< per-user magnitude factor in [1 - j, 1 + j]
  double dwell_probability = 0.08;
  int dwell_min = 3;
  int dwell_max = 10;
  double vertical_noise = 10.0;

  static PatternFamily focus();
  static PatternFamily explore();
};

struct ViewportTrace {
  int user_id = 0;
  int video_id = 0;
  Trajectory trajectory;
};

/// One trajectory per user, `duration` seconds sampled at `sample_rate` Hz.
/// Pure function of its arguments.
std::vector<ViewportTrace> gen_viewport_traces(const PatternFamily& family, int users, double duration,
                                               double sample_rate, const TileGrid& frame, std::uint64_t seed,
                                               int video_id = 0);

/// CSV `user_id,video_id,t_seconds,x_norm,y_norm`, six decimals.
void save_viewport_csv(const std::filesystem::path& path, const std::vector<ViewportTrace>& traces,
                       const TileGrid& frame);
/// Groups rows by (user_id, video_id) in order of first appearance; the
/// sampling interval comes from consecutive timestamps.
std::vector<ViewportTrace> load_viewport_csv(const std::filesystem::path& path, const TileGrid& frame);

struct BandwidthProfile {
  std::string kind = "stable";  ///< stable | stepwise | bursty
  double level = 10.0;          ///< Mbps; the first level for stepwise and bursty
  double alt_level = 4.0;       ///< second level
  double period = 2.0;          ///< seconds per level for stepwise
  double switch_probability = 0.1;  ///< bursty: chance per sample to change level
  double sigma = 0.4;           ///< bursty: log-normal spread
  double floor = 0.05;          ///< Mbps lower bound on every sample
};

BandwidthTrace gen_bandwidth_trace(const BandwidthProfile& profile, double duration, double interval,
                                   std::uint64_t seed);

}  // namespace mansy
