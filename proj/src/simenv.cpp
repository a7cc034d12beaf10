#include "mansy/simenv.hpp"

#include "mansy/csv.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <random>
#include <stdexcept>

namespace mansy {

std::size_t BitrateLadder::index_of(double mbps) const {
  for (std::size_t i = 0; i < rungs.size(); ++i)
    if (rungs[i] == mbps) return i;
  throw std::invalid_argument("bitrate " + csv::format(mbps) + " is not a ladder rung");
}

double BitrateLadder::closest(double mbps) const {
  double best = rungs.front();
  for (double r : rungs)
    if (std::abs(r - mbps) < std::abs(best - mbps)) best = r;
  return best;
}

void BitrateLadder::validate() const {
  if (rungs.empty()) throw std::invalid_argument("ladder needs at least one rung");
  if (!(rungs.front() > 0.0)) throw std::invalid_argument("ladder rungs must be positive");
  for (std::size_t i = 1; i < rungs.size(); ++i)
    if (!(rungs[i] > rungs[i - 1])) throw std::invalid_argument("ladder rungs must be strictly ascending");
}

std::vector<BitrateAction> action_space(const BitrateLadder& ladder) {
  std::vector<BitrateAction> out;
  for (std::size_t i = 0; i < ladder.size(); ++i)
    for (std::size_t o = 0; o <= i; ++o) out.push_back({ladder.rungs[i], ladder.rungs[o]});
  return out;
}

VideoManifest::VideoManifest(TileGrid grid, BitrateLadder ladder, int chunks, double chunk_duration)
    : grid_(grid), ladder_(std::move(ladder)), chunks_(chunks), chunk_duration_(chunk_duration) {
  grid_.validate();
  ladder_.validate();
  if (chunks < 1) throw std::invalid_argument("manifest needs at least one chunk");
  if (!(chunk_duration > 0.0)) throw std::invalid_argument("chunk duration must be positive");
  bits_.assign(static_cast<std::size_t>(chunks) * static_cast<std::size_t>(grid_.tile_count()) * ladder_.size(), 0.0);
}

void VideoManifest::validate() const {
  for (int c = 0; c < chunks_; ++c)
    for (int t = 0; t < grid_.tile_count(); ++t)
      for (std::size_t r = 0; r < ladder_.size(); ++r) {
        const double b = bits(c, t, r);
        if (!(b > 0.0)) throw std::invalid_argument("tile sizes must be positive");
        if (r > 0 && !(b > bits(c, t, r - 1))) throw std::invalid_argument("tile sizes must grow with the rung");
      }
}

VideoManifest synthetic_manifest(const TileGrid& grid, const BitrateLadder& ladder, int chunks, double chunk_duration,
                                 std::uint64_t seed, double jitter) {
  VideoManifest m(grid, ladder, chunks, chunk_duration);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> eps(-jitter, jitter);
  const double per_tile = 1e6 * chunk_duration / grid.tile_count();
  for (int c = 0; c < chunks; ++c)
    for (int t = 0; t < grid.tile_count(); ++t) {
      double prev = 0.0;
      for (std::size_t r = 0; r < ladder.size(); ++r) {
        double b = std::round(ladder.rungs[r] * per_tile * (1.0 + eps(rng)));
        b = std::max(b, prev + 1.0);
        m.set_bits(c, t, r, b);
        prev = b;
      }
    }
  return m;
}

VideoManifest load_manifest(const std::filesystem::path& path, const TileGrid& grid, const BitrateLadder& ladder,
                            double chunk_duration) {
  const auto table = csv::read(path);
  const std::string src = path.string();
  const auto cc = table.column("chunk"), ct = table.column("tile"), cr = table.column("rung_index"),
             cb = table.column("bits");
  long long max_chunk = -1;
  for (const auto& row : table.rows) max_chunk = std::max(max_chunk, csv::to_int(row, cc, src));
  if (max_chunk < 0) throw std::runtime_error(src + ": manifest has no rows");
  VideoManifest m(grid, ladder, static_cast<int>(max_chunk + 1), chunk_duration);
  std::vector<char> seen(static_cast<std::size_t>(m.chunks()) * grid.tile_count() * ladder.size(), 0);
  for (const auto& row : table.rows) {
    const auto c = csv::to_int(row, cc, src), t = csv::to_int(row, ct, src), r = csv::to_int(row, cr, src);
    if (c < 0 || t < 0 || t >= grid.tile_count() || r < 0 || r >= static_cast<long long>(ladder.size()))
      throw std::runtime_error(src + ":" + std::to_string(row.line) + ": index out of range");
    m.set_bits(static_cast<int>(c), static_cast<int>(t), static_cast<std::size_t>(r), csv::to_double(row, cb, src));
    seen[(static_cast<std::size_t>(c) * grid.tile_count() + static_cast<std::size_t>(t)) * ladder.size() +
         static_cast<std::size_t>(r)] = 1;
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw std::runtime_error(src + ": manifest is missing (chunk, tile, rung) entries");
  m.validate();
  return m;
}

void save_manifest(const std::filesystem::path& path, const VideoManifest& m) {
  std::string out = "chunk,tile,rung_index,bits\n";
  for (int c = 0; c < m.chunks(); ++c)
    for (int t = 0; t < m.grid().tile_count(); ++t)
      for (std::size_t r = 0; r < m.ladder().size(); ++r)
        out += std::to_string(c) + "," + std::to_string(t) + "," + std::to_string(r) + "," + csv::format(m.bits(c, t, r)) +
               "\n";
  csv::write_text(path, out);
}

void BandwidthTrace::validate() const {
  if (mbps.empty()) throw std::invalid_argument("bandwidth trace is empty");
  if (!(interval > 0.0)) throw std::invalid_argument("bandwidth interval must be positive");
  for (double v : mbps)
    if (!(v > 0.0)) throw std::invalid_argument("bandwidth samples must be positive");
}

BandwidthTrace load_bandwidth(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const std::string src = path.string();
  const auto ct = table.column("t_seconds"), cm = table.column("mbps");
  BandwidthTrace tr;
  std::vector<double> times;
  for (const auto& row : table.rows) {
    times.push_back(csv::to_double(row, ct, src));
    tr.mbps.push_back(csv::to_double(row, cm, src));
    if (!(tr.mbps.back() > 0.0))
      throw std::runtime_error(src + ":" + std::to_string(row.line) + ": throughput must be positive");
  }
  if (times.empty()) throw std::runtime_error(src + ": bandwidth trace has no rows");
  if (times.size() > 1) {
    tr.interval = times[1] - times[0];
    for (std::size_t i = 1; i < times.size(); ++i)
      if (std::abs(times[i] - times[i - 1] - tr.interval) > 1e-6 * std::max(1.0, tr.interval))
        throw std::runtime_error(src + ":" + std::to_string(table.rows[i].line) + ": samples must be evenly spaced");
  }
  tr.validate();
  return tr;
}

void save_bandwidth(const std::filesystem::path& path, const BandwidthTrace& trace) {
  std::string out = "t_seconds,mbps\n";
  for (std::size_t i = 0; i < trace.mbps.size(); ++i)
    out += csv::format(trace.interval * static_cast<double>(i)) + "," + csv::format(trace.mbps[i]) + "\n";
  csv::write_text(path, out);
}

double transfer_time(const BandwidthTrace& trace, double bits, double start_time) {
  if (bits <= 0.0) return 0.0;
  const double period = trace.period();
  double phase = std::fmod(start_time, period);
  if (phase < 0.0) phase += period;
  auto idx = static_cast<std::size_t>(phase / trace.interval);
  if (idx >= trace.mbps.size()) idx = trace.mbps.size() - 1;
  double into = phase - static_cast<double>(idx) * trace.interval;
  double elapsed = 0.0;
  double left = bits;
  for (;;) {
    const double rate = trace.mbps[idx] * 1e6;
    const double span = std::max(trace.interval - into, 0.0);
    const double capacity = rate * span;
    if (capacity >= left) return elapsed + left / rate;
    left -= capacity;
    elapsed += span;
    into = 0.0;
    idx = (idx + 1) % trace.mbps.size();
  }
}

double chunk_bits(const VideoManifest& manifest, int chunk, std::span<const double> tile_mbps) {
  if (tile_mbps.size() != static_cast<std::size_t>(manifest.grid().tile_count()))
    throw std::invalid_argument("one bitrate per tile expected");
  double total = 0.0;
  for (std::size_t t = 0; t < tile_mbps.size(); ++t)
    total += manifest.bits(chunk, static_cast<int>(t), manifest.ladder().index_of(tile_mbps[t]));
  return total;
}

double download_time(const VideoManifest& manifest, int chunk, std::span<const double> tile_mbps,
                     const BandwidthTrace& trace, double start_time) {
  return transfer_time(trace, chunk_bits(manifest, chunk, tile_mbps), start_time);
}

std::vector<int> ring_index(const TileMask& predicted) {
  const TileGrid& g = predicted.grid();
  if (predicted.empty()) throw std::invalid_argument("predicted viewport mask is empty");
  std::vector<int> ring(predicted.size(), -1);
  std::deque<int> frontier;
  for (std::size_t t = 0; t < predicted.size(); ++t)
    if (predicted[t]) {
      ring[t] = 0;
      frontier.push_back(static_cast<int>(t));
    }
  while (!frontier.empty()) {
    const int t = frontier.front();
    frontier.pop_front();
    const int row = t / g.cols, col = t % g.cols;
    for (int dr = -1; dr <= 1; ++dr) {
      const int r = row + dr;
      if (r < 0 || r >= g.rows) continue;
      for (int dc = -1; dc <= 1; ++dc) {
        const int c = ((col + dc) % g.cols + g.cols) % g.cols;
        const auto n = static_cast<std::size_t>(r * g.cols + c);
        if (ring[n] >= 0) continue;
        ring[n] = ring[static_cast<std::size_t>(t)] + 1;
        frontier.push_back(static_cast<int>(n));
      }
    }
  }
  return ring;
}

std::vector<double> pyramid_assign(const BitrateAction& action, const TileMask& predicted, const BitrateLadder& ladder,
                                   double scale) {
  if (!(scale >= 1.0)) throw std::invalid_argument("pyramid scale must be at least 1");
  const auto ring = ring_index(predicted);
  const int deepest = *std::max_element(ring.begin(), ring.end());
  std::vector<double> per_ring(static_cast<std::size_t>(deepest) + 1, action.r_in);
  double target = action.r_out;
  for (int j = 1; j <= deepest; ++j) {
    per_ring[static_cast<std::size_t>(j)] = std::max(ladder.closest(target), ladder.min());
    target /= scale;
  }
  std::vector<double> out(ring.size());
  for (std::size_t t = 0; t < ring.size(); ++t) out[t] = per_ring[static_cast<std::size_t>(ring[t])];
  return out;
}

Simulator::Simulator(VideoManifest manifest, BandwidthTrace trace, SimConfig config)
    : manifest_(std::move(manifest)), trace_(std::move(trace)), config_(config) {
  manifest_.validate();
  trace_.validate();
  if (config_.buffer_cap < manifest_.chunk_duration())
    throw std::invalid_argument("buffer cap must hold at least one chunk");
  if (config_.history < 1) throw std::invalid_argument("history length must be positive");
  if (!(config_.scale >= 1.0)) throw std::invalid_argument("pyramid scale must be at least 1");
}

SessionState Simulator::start(double trace_offset) const {
  SessionState s;
  s.clock = trace_offset;
  s.q1_previous = config_.initial_q1;
  const auto k = static_cast<std::size_t>(config_.history);
  s.g.assign(k, 0.0);
  s.n.assign(k, 0.0);
  s.q1.assign(k, 0.0);
  s.q2.assign(k, 0.0);
  s.q3.assign(k, 0.0);
  return s;
}

namespace {
void push_history(std::vector<double>& h, double v) {
  std::rotate(h.begin(), h.begin() + 1, h.end());
  h.back() = v;
}
}  // namespace

StepRecord Simulator::step(SessionState& s, const BitrateAction& action, const TileMask& predicted,
                           const TileMask& actual, const QoEPreference& pref) const {
  if (finished(s)) throw std::logic_error("stepping a finished session");
  const double duration = manifest_.chunk_duration();
  StepRecord rec;
  rec.chunk = s.chunk;
  rec.action = action;
  rec.wait = std::max(0.0, s.buffer - (config_.buffer_cap - duration));
  s.clock += rec.wait;
  s.buffer -= rec.wait;

  rec.tile_mbps = pyramid_assign(action, predicted, manifest_.ladder(), config_.scale);
  rec.bits = chunk_bits(manifest_, s.chunk, rec.tile_mbps);
  rec.request_time = s.clock;
  rec.download_time = transfer_time(trace_, rec.bits, s.clock);
  rec.buffer_before = s.buffer;
  rec.qoe = evaluate_chunk(rec.tile_mbps, actual, s.q1_previous, rec.download_time, s.buffer, pref);
  rec.buffer_after = std::min(std::max(s.buffer - rec.download_time, 0.0) + duration, config_.buffer_cap);
  rec.throughput = rec.download_time > 0.0 ? rec.bits / rec.download_time / 1e6 : 0.0;
  rec.accuracy = iou(predicted, actual);

  s.clock += rec.download_time;
  s.buffer = rec.buffer_after;
  s.q1_previous = rec.qoe.q1;
  push_history(s.g, rec.accuracy);
  push_history(s.n, rec.throughput);
  push_history(s.q1, rec.qoe.q1);
  push_history(s.q2, rec.qoe.q2);
  push_history(s.q3, rec.qoe.q3);
  ++s.chunk;
  return rec;
}

EnvState Simulator::observe(const SessionState& s, const TileMask& predicted_next) const {
  EnvState e;
  const auto& ladder = manifest_.ladder();
  const int tiles = manifest_.grid().tile_count();
  e.Z.assign(static_cast<std::size_t>(tiles) * ladder.size(), 0.0);
  if (!finished(s))
    for (int t = 0; t < tiles; ++t)
      for (std::size_t r = 0; r < ladder.size(); ++r)
        e.Z[static_cast<std::size_t>(t) * ladder.size() + r] = manifest_.bits(s.chunk, t, r);
  e.R = ladder.rungs;
  e.v = predicted_next;
  e.g = s.g;
  e.n = s.n;
  e.q1 = s.q1;
  e.q2 = s.q2;
  e.q3 = s.q3;
  e.b = s.buffer;
  return e;
}

double harmonic_mean(std::span<const double> values) {
  double inv = 0.0;
  int n = 0;
  for (double v : values)
    if (v > 0.0) {
      inv += 1.0 / v;
      ++n;
    }
  return n ? n / inv : 0.0;
}

BitrateAction heuristic_policy(const Simulator& sim, const SessionState& s, const TileMask& predicted,
                               double estimate_mbps) {
  const auto& m = sim.manifest();
  const auto actions = action_space(m.ladder());
  const double budget = estimate_mbps * 1e6 * m.chunk_duration();
  for (auto it = actions.rbegin(); it != actions.rend(); ++it) {
    const auto rates = pyramid_assign(*it, predicted, m.ladder(), sim.config().scale);
    if (chunk_bits(m, s.chunk, rates) <= budget) return *it;
  }
  return actions.front();
}

std::string episode_log_csv(std::span<const StepRecord> records) {
  std::string out = "chunk,r_in,r_out,l_c,q1,q2,q3,qoe_total,buffer\n";
  for (const auto& r : records)
    out += std::to_string(r.chunk) + "," + csv::format(r.action.r_in) + "," + csv::format(r.action.r_out) + "," +
           csv::format(r.download_time) + "," + csv::format(r.qoe.q1) + "," + csv::format(r.qoe.q2) + "," +
           csv::format(r.qoe.q3) + "," + csv::format(r.qoe.total) + "," + csv::format(r.buffer_after) + "\n";
  return out;
}

}  // namespace mansy
