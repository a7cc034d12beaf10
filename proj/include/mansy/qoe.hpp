#pragma once

// Per-chunk QoE terms: viewport quality, quality variation, rebuffering, and
// their preference-weighted score.

#include "mansy/geometry.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mansy {

/// Non-negative weights on (quality, variation, rebuffering) summing to 1.
struct QoEPreference {
  double lambda1 = 1.0 / 3.0;
  double lambda2 = 1.0 / 3.0;
  double lambda3 = 1.0 / 3.0;

  std::array<double, 3> as_array() const { return {lambda1, lambda2, lambda3}; }
  /// Throws std::invalid_argument off the simplex (tolerance 1e-9).
  void validate() const;
  std::string label() const;

  friend bool operator==(const QoEPreference&, const QoEPreference&) = default;
};

struct ChunkQoEBreakdown {
  double q1 = 0.0;  ///< mean in-viewport bitrate, Mbps
  double q2 = 0.0;  ///< intra-viewport spread plus change from the previous chunk, Mbps
  double q3 = 0.0;  ///< stall seconds
  double total = 0.0;
};

/// Mean bitrate over tiles in `actual`. Throws std::invalid_argument on an empty mask.
double viewport_quality(std::span<const double> tile_bitrates, const TileMask& actual);

/// Mean |r_i - q1| over tiles in `actual`, plus |q1 - q1_previous|.
double quality_variation(std::span<const double> tile_bitrates, const TileMask& actual, double q1_current,
                         double q1_previous);

/// (download_time - buffer)+
double rebuffer_time(double download_time, double buffer_at_request);

double chunk_qoe(double q1, double q2, double q3, const QoEPreference& pref);

/// Fills q1..q3 and total in one pass.
ChunkQoEBreakdown evaluate_chunk(std::span<const double> tile_bitrates, const TileMask& actual, double q1_previous,
                                 double download_time, double buffer_at_request, const QoEPreference& pref);

struct PreferencePool {
  std::vector<QoEPreference> train;
  std::vector<QoEPreference> held_out;
};

/// The built-in eight preferences, four for training and four held out.
PreferencePool preference_pool();

/// CSV `lambda1,lambda2,lambda3,split` with split "train" or "held_out".
PreferencePool load_preferences(const std::filesystem::path& path);
void save_preferences(const std::filesystem::path& path, const PreferencePool& pool);

}  // namespace mansy
