#include "mansy/traces.hpp"

#include "mansy/csv.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

namespace mansy {

PatternFamily PatternFamily::focus() { return PatternFamily{}; }

PatternFamily PatternFamily::explore() {
  PatternFamily f;
  f.name = "explore";
  f.noise = 10.0;
  return f;
}

namespace {

double wrap_x(double x, double w) {
  x = std::fmod(x, w);
  if (x < 0.0) x += w;
  return x >= w ? 0.0 : x;
}

double clamp_y(double y, double h) { return std::clamp(y, 0.0, std::nextafter(h, 0.0)); }

Trajectory focus_user(const PatternFamily& f, int samples, double dt, const TileGrid& frame, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double cx = wrap_x(frame.video_width / 2 + f.center_spread * n(rng), frame.video_width);
  const double cy = clamp_y(frame.video_height / 2 + 0.5 * f.center_spread * n(rng), frame.video_height);
  Trajectory tr{{}, dt};
  double x = cx, y = cy;
  for (int s = 0; s < samples; ++s) {
    tr.points.push_back({x, y});
    const double dx = std::remainder(cx - x, frame.video_width);  // signed, short way round
    x = wrap_x(x + f.reversion * dx + f.noise * n(rng), frame.video_width);
    y = clamp_y(y + f.reversion * (cy - y) + 0.5 * f.noise * n(rng), frame.video_height);
  }
  return tr;
}

Trajectory explore_user(const PatternFamily& f, int samples, double dt, const TileGrid& frame, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution dwell(f.dwell_probability);
  std::uniform_int_distribution<int> dwell_len(f.dwell_min, std::max(f.dwell_min, f.dwell_max));
  const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
  const double speed = sign * f.drift * (1.0 + f.drift_jitter * (2.0 * u(rng) - 1.0));
  const double cy = frame.video_height / 2;
  Trajectory tr{{}, dt};
  double x = frame.video_width * u(rng);
  double y = clamp_y(cy + 0.25 * frame.video_height * (2.0 * u(rng) - 1.0), frame.video_height);
  int paused = 0;
  for (int s = 0; s < samples; ++s) {
    tr.points.push_back({x, y});
    if (paused > 0) {
      --paused;
    } else if (f.dwell_probability > 0.0 && dwell(rng)) {
      paused = dwell_len(rng);
    } else {
      x = wrap_x(x + speed, frame.video_width);
    }
    if (f.vertical_noise > 0.0) y = clamp_y(y + 0.05 * (cy - y) + f.vertical_noise * n(rng), frame.video_height);
  }
  return tr;
}

}  // namespace

std::vector<ViewportTrace> gen_viewport_traces(const PatternFamily& family, int users, double duration,
                                               double sample_rate, const TileGrid& frame, std::uint64_t seed,
                                               int video_id) {
  if (users < 0 || !(duration > 0.0) || !(sample_rate > 0.0))
    throw std::invalid_argument("viewport generator needs users >= 0 and positive duration and rate");
  const int samples = std::max(1, static_cast<int>(std::lround(duration * sample_rate)));
  const double dt = 1.0 / sample_rate;
  std::vector<ViewportTrace> out;
  for (int u = 0; u < users; ++u) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(u) + 1);
    ViewportTrace t{u, video_id, {}};
    if (family.name == "focus")
      t.trajectory = focus_user(family, samples, dt, frame, rng);
    else if (family.name == "explore")
      t.trajectory = explore_user(family, samples, dt, frame, rng);
    else
      throw std::invalid_argument("unknown pattern family '" + family.name + "'");
    out.push_back(std::move(t));
  }
  return out;
}

void save_viewport_csv(const std::filesystem::path& path, const std::vector<ViewportTrace>& traces,
                       const TileGrid& frame) {
  std::string out = "user_id,video_id,t_seconds,x_norm,y_norm\n";
  for (const auto& t : traces)
    for (std::size_t s = 0; s < t.trajectory.points.size(); ++s) {
      const auto& p = t.trajectory.points[s];
      // Rounding to six decimals can reach 1.0: x wraps to 0, y stays below the pole.
      double xn = std::round(p.x / frame.video_width * 1e6) / 1e6;
      double yn = std::round(p.y / frame.video_height * 1e6) / 1e6;
      if (xn >= 1.0) xn = 0.0;
      if (yn >= 1.0) yn = 0.999999;
      out += std::to_string(t.user_id) + "," + std::to_string(t.video_id) + "," +
             csv::format6(static_cast<double>(s) * t.trajectory.timestep_duration) + "," + csv::format6(xn) + "," +
             csv::format6(yn) + "\n";
    }
  csv::write_text(path, out);
}

std::vector<ViewportTrace> load_viewport_csv(const std::filesystem::path& path, const TileGrid& frame) {
  const auto table = csv::read(path);
  const std::string src = path.string();
  const auto cu = table.column("user_id"), cv = table.column("video_id"), ct = table.column("t_seconds"),
             cx = table.column("x_norm"), cy = table.column("y_norm");
  std::vector<ViewportTrace> out;
  std::vector<std::vector<double>> times;
  std::map<std::pair<long long, long long>, std::size_t> index;
  for (const auto& row : table.rows) {
    const auto key = std::make_pair(csv::to_int(row, cu, src), csv::to_int(row, cv, src));
    const double x = csv::to_double(row, cx, src), y = csv::to_double(row, cy, src);
    if (x < 0.0 || x >= 1.0 || y < 0.0 || y >= 1.0)
      throw std::runtime_error(src + ":" + std::to_string(row.line) + ": normalized coordinates must lie in [0, 1)");
    auto [it, fresh] = index.try_emplace(key, out.size());
    if (fresh) {
      out.push_back({static_cast<int>(key.first), static_cast<int>(key.second), {}});
      times.emplace_back();
    }
    const double t = csv::to_double(row, ct, src);
    if (!times[it->second].empty() && !(t > times[it->second].back()))
      throw std::runtime_error(src + ":" + std::to_string(row.line) + ": timestamps must increase per user");
    times[it->second].push_back(t);
    out[it->second].trajectory.points.push_back({x * frame.video_width, y * frame.video_height});
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    if (times[i].size() > 1) out[i].trajectory.timestep_duration = times[i][1] - times[i][0];
  return out;
}

BandwidthTrace gen_bandwidth_trace(const BandwidthProfile& p, double duration, double interval, std::uint64_t seed) {
  if (!(duration > 0.0) || !(interval > 0.0)) throw std::invalid_argument("bandwidth duration and interval must be positive");
  if (!(p.level > 0.0) || !(p.alt_level > 0.0)) throw std::invalid_argument("bandwidth levels must be positive");
  const auto samples = static_cast<std::size_t>(std::max(1L, std::lround(duration / interval)));
  BandwidthTrace tr{interval, {}};
  std::mt19937_64 rng(seed);
  if (p.kind == "stable") {
    tr.mbps.assign(samples, p.level);
  } else if (p.kind == "stepwise") {
    if (!(p.period > 0.0)) throw std::invalid_argument("stepwise period must be positive");
    for (std::size_t i = 0; i < samples; ++i) {
      const auto phase = static_cast<long long>(std::floor((static_cast<double>(i) * interval + 1e-9) / p.period));
      tr.mbps.push_back(phase % 2 == 0 ? p.level : p.alt_level);
    }
  } else if (p.kind == "bursty") {
    std::normal_distribution<double> n(-p.sigma * p.sigma / 2.0, p.sigma);
    std::bernoulli_distribution flip(p.switch_probability);
    bool high = true;
    for (std::size_t i = 0; i < samples; ++i) {
      if (flip(rng)) high = !high;
      tr.mbps.push_back(std::max(p.floor, (high ? p.level : p.alt_level) * std::exp(n(rng))));
    }
  } else {
    throw std::invalid_argument("unknown bandwidth profile '" + p.kind + "'");
  }
  return tr;
}

}  // namespace mansy
