#pragma once

// Tile-based streaming simulator: bitrate ladder and manifest, bandwidth
// replay, pyramid bitrate assignment, sequential chunk downloads with a
// capped playback buffer, and the observation handed to the bitrate agent.

#include "mansy/geometry.hpp"
#include "mansy/qoe.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mansy {

struct BitrateLadder {
  std::vector<double> rungs{1.0, 5.0, 8.0, 16.0, 35.0};  ///< Mbps, strictly ascending

  std::size_t size() const { return rungs.size(); }
  double min() const { return rungs.front(); }
  double max() const { return rungs.back(); }
  /// Position of an exact rung value; throws std::invalid_argument otherwise.
  std::size_t index_of(double mbps) const;
  /// Rung nearest to `mbps`; equidistant targets go to the lower rung.
  double closest(double mbps) const;
  void validate() const;
};

struct BitrateAction {
  double r_in = 0.0;
  double r_out = 0.0;

  friend bool operator==(const BitrateAction&, const BitrateAction&) = default;
};

/// Every (r_in, r_out) with r_in >= r_out, ordered by (r_in, r_out).
std::vector<BitrateAction> action_space(const BitrateLadder& ladder);

/// Tile sizes in bits for every (chunk, tile, rung).
class VideoManifest {
 public:
  VideoManifest() = default;
  VideoManifest(TileGrid grid, BitrateLadder ladder, int chunks, double chunk_duration);

  const TileGrid& grid() const { return grid_; }
  const BitrateLadder& ladder() const { return ladder_; }
  int chunks() const { return chunks_; }
  double chunk_duration() const { return chunk_duration_; }

  double bits(int chunk, int tile, std::size_t rung) const { return bits_[offset(chunk, tile, rung)]; }
  void set_bits(int chunk, int tile, std::size_t rung, double v) { bits_[offset(chunk, tile, rung)] = v; }

  /// Throws std::invalid_argument on non-positive sizes or sizes that do not
  /// grow with the rung.
  void validate() const;

 private:
  std::size_t offset(int chunk, int tile, std::size_t rung) const {
    return (static_cast<std::size_t>(chunk) * static_cast<std::size_t>(grid_.tile_count()) +
            static_cast<std::size_t>(tile)) *
               ladder_.size() +
           rung;
  }

  TileGrid grid_;
  BitrateLadder ladder_;
  int chunks_ = 0;
  double chunk_duration_ = 1.0;
  std::vector<double> bits_;
};

/// size = rung * duration / tiles * (1 + e), e uniform in [-jitter, jitter],
/// then forced strictly increasing across rungs.
VideoManifest synthetic_manifest(const TileGrid& grid, const BitrateLadder& ladder, int chunks,
                                 double chunk_duration, std::uint64_t seed, double jitter = 0.1);

/// CSV `chunk,tile,rung_index,bits`; every (chunk, tile, rung) must appear.
VideoManifest load_manifest(const std::filesystem::path& path, const TileGrid& grid, const BitrateLadder& ladder,
                            double chunk_duration);
void save_manifest(const std::filesystem::path& path, const VideoManifest& manifest);

/// Throughput samples at a fixed interval, replayed cyclically.
struct BandwidthTrace {
  double interval = 1.0;      ///< seconds per sample
  std::vector<double> mbps;

  double period() const { return interval * static_cast<double>(mbps.size()); }
  void validate() const;
};

/// CSV `t_seconds,mbps` with evenly spaced timestamps.
BandwidthTrace load_bandwidth(const std::filesystem::path& path);
void save_bandwidth(const std::filesystem::path& path, const BandwidthTrace& trace);

/// Seconds needed to move `bits` starting at `start_time`, integrating the
/// trace interval by interval.
double transfer_time(const BandwidthTrace& trace, double bits, double start_time);

/// Bits of `chunk` when tile i is fetched at `tile_mbps[i]` (each a ladder rung).
double chunk_bits(const VideoManifest& manifest, int chunk, std::span<const double> tile_mbps);

double download_time(const VideoManifest& manifest, int chunk, std::span<const double> tile_mbps,
                     const BandwidthTrace& trace, double start_time);

/// Ring number of every tile: 0 inside `predicted`, otherwise the number of
/// one-tile dilations (8-neighbourhood, wrapping horizontally) needed to reach it.
std::vector<int> ring_index(const TileMask& predicted);

/// Viewport tiles get r_in, ring j >= 1 gets closest(r_out / scale^(j-1)),
/// never below the lowest rung.
std::vector<double> pyramid_assign(const BitrateAction& action, const TileMask& predicted,
                                   const BitrateLadder& ladder, double scale);

struct SimConfig {
  double buffer_cap = 4.0;   ///< seconds
  double scale = 2.0;        ///< pyramid decay
  int history = 8;           ///< k
  double initial_q1 = 0.0;   ///< q1 of the chunk before the first one
};

/// Agent observation before normalisation.
struct EnvState {
  std::vector<double> Z;   ///< bits, tile-major then rung, for the next chunk
  std::vector<double> R;   ///< ladder rungs
  TileMask v;              ///< predicted viewport of the next chunk
  std::vector<double> g, n, q1, q2, q3;  ///< last k values, oldest first
  double b = 0.0;
};

/// Mutable part of a session. Everything else is fixed per simulator.
struct SessionState {
  int chunk = 0;
  double clock = 0.0;   ///< trace time in seconds
  double buffer = 0.0;
  double q1_previous = 0.0;
  std::vector<double> g, n, q1, q2, q3;

  friend bool operator==(const SessionState&, const SessionState&) = default;
};

struct StepRecord {
  int chunk = 0;
  BitrateAction action;
  std::vector<double> tile_mbps;
  double wait = 0.0;            ///< idle time before the request because the buffer was full
  double request_time = 0.0;
  double download_time = 0.0;
  double buffer_before = 0.0;   ///< at request
  double buffer_after = 0.0;
  double bits = 0.0;
  double throughput = 0.0;      ///< Mbps
  double accuracy = 0.0;        ///< IoU of predicted vs actual
  ChunkQoEBreakdown qoe;
};

class Simulator {
 public:
  Simulator(VideoManifest manifest, BandwidthTrace trace, SimConfig config = {});

  const VideoManifest& manifest() const { return manifest_; }
  const BandwidthTrace& trace() const { return trace_; }
  const SimConfig& config() const { return config_; }

  /// Fresh session whose clock starts at `trace_offset` seconds.
  SessionState start(double trace_offset = 0.0) const;
  bool finished(const SessionState& s) const { return s.chunk >= manifest_.chunks(); }

  /// Downloads the current chunk. Pure in (state, action, masks, pref).
  /// Throws std::logic_error on a finished session.
  StepRecord step(SessionState& state, const BitrateAction& action, const TileMask& predicted,
                  const TileMask& actual, const QoEPreference& pref) const;

  EnvState observe(const SessionState& s, const TileMask& predicted_next) const;

 private:
  VideoManifest manifest_;
  BandwidthTrace trace_;
  SimConfig config_;
};

/// Harmonic mean of the positive entries; 0 when there are none.
double harmonic_mean(std::span<const double> values);

/// Highest action in action-space order whose pyramid-assigned chunk fits
/// `estimate_mbps * chunk_duration`; the lowest action when none fits.
BitrateAction heuristic_policy(const Simulator& sim, const SessionState& s, const TileMask& predicted,
                               double estimate_mbps);

/// CSV `chunk,r_in,r_out,l_c,q1,q2,q3,qoe_total,buffer`.
std::string episode_log_csv(std::span<const StepRecord> records);

}  // namespace mansy
