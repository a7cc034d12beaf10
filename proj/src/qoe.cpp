#include "mansy/qoe.hpp"

#include "mansy/csv.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace mansy {

void QoEPreference::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0)
    throw std::invalid_argument("preference weights must be non-negative");
  if (std::abs(lambda1 + lambda2 + lambda3 - 1.0) > 1e-9)
    throw std::invalid_argument("preference weights must sum to 1");
}

std::string QoEPreference::label() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f/%.4f/%.4f", lambda1, lambda2, lambda3);
  return buf;
}

namespace {
void check_inputs(std::span<const double> rates, const TileMask& actual) {
  if (rates.size() != actual.size()) throw std::invalid_argument("one bitrate per tile expected");
  if (actual.empty()) throw std::invalid_argument("actual viewport mask is empty");
}
}  // namespace

double viewport_quality(std::span<const double> tile_bitrates, const TileMask& actual) {
  check_inputs(tile_bitrates, actual);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (!actual[i]) continue;
    sum += tile_bitrates[i];
    ++n;
  }
  return sum / static_cast<double>(n);
}

double quality_variation(std::span<const double> tile_bitrates, const TileMask& actual, double q1_current,
                         double q1_previous) {
  check_inputs(tile_bitrates, actual);
  double spread = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (!actual[i]) continue;
    spread += std::abs(tile_bitrates[i] - q1_current);
    ++n;
  }
  return spread / static_cast<double>(n) + std::abs(q1_current - q1_previous);
}

double rebuffer_time(double download_time, double buffer_at_request) {
  return std::max(download_time - buffer_at_request, 0.0);
}

double chunk_qoe(double q1, double q2, double q3, const QoEPreference& pref) {
  return pref.lambda1 * q1 - pref.lambda2 * q2 - pref.lambda3 * q3;
}

ChunkQoEBreakdown evaluate_chunk(std::span<const double> tile_bitrates, const TileMask& actual, double q1_previous,
                                 double download_time, double buffer_at_request, const QoEPreference& pref) {
  ChunkQoEBreakdown b;
  b.q1 = viewport_quality(tile_bitrates, actual);
  b.q2 = quality_variation(tile_bitrates, actual, b.q1, q1_previous);
  b.q3 = rebuffer_time(download_time, buffer_at_request);
  b.total = chunk_qoe(b.q1, b.q2, b.q3, pref);
  return b;
}

PreferencePool preference_pool() {
  constexpr double n = 1.0 / 9.0, s = 7.0 / 9.0, f = 5.0 / 9.0, t = 1.0 / 3.0;
  return {{{s, n, n}, {n, s, n}, {n, n, s}, {t, t, t}}, {{f, t, n}, {n, f, t}, {t, n, f}, {f, n, t}}};
}

PreferencePool load_preferences(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const std::string src = path.string();
  const std::size_t c1 = table.column("lambda1"), c2 = table.column("lambda2"), c3 = table.column("lambda3"),
                    cs = table.column("split");
  PreferencePool pool;
  for (const auto& row : table.rows) {
    QoEPreference p{csv::to_double(row, c1, src), csv::to_double(row, c2, src), csv::to_double(row, c3, src)};
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(src + ":" + std::to_string(row.line) + ": " + e.what());
    }
    const std::string& split = row.fields[cs];
    if (split == "train")
      pool.train.push_back(p);
    else if (split == "held_out")
      pool.held_out.push_back(p);
    else
      throw std::runtime_error(src + ":" + std::to_string(row.line) + ": unknown split '" + split + "'");
  }
  return pool;
}

void save_preferences(const std::filesystem::path& path, const PreferencePool& pool) {
  std::string out = "lambda1,lambda2,lambda3,split\n";
  auto emit = [&](const std::vector<QoEPreference>& ps, const char* split) {
    for (const auto& p : ps)
      out += csv::format(p.lambda1) + "," + csv::format(p.lambda2) + "," + csv::format(p.lambda3) + "," + split + "\n";
  };
  emit(pool.train, "train");
  emit(pool.held_out, "held_out");
  csv::write_text(path, out);
}

}  // namespace mansy
