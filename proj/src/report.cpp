#include "mansy/report.hpp"

#include <algorithm>
#include <stdexcept>

namespace mansy::report {

std::vector<EpisodeSummary> summarize_episode_log(const csv::Table& log, const std::string& source,
                                                  const std::string& name) {
  const std::size_t c_chunk = log.column("chunk"), c_rin = log.column("r_in"), c_q1 = log.column("q1"),
                    c_q2 = log.column("q2"), c_q3 = log.column("q3"), c_total = log.column("qoe_total"),
                    c_buffer = log.column("buffer");
  const bool grouped = std::find(log.header.begin(), log.header.end(), "episode") != log.header.end();
  const std::size_t c_episode = grouped ? log.column("episode") : 0;

  std::vector<EpisodeSummary> out;
  long long last_chunk = -1;
  const auto finish = [&] {
    if (out.empty()) return;
    auto& s = out.back();
    const double n = s.chunks;
    s.qoe_mean /= n;
    s.q1_mean /= n;
    s.q2_mean /= n;
    s.q3_mean /= n;
    s.r_in_mean /= n;
    s.buffer_mean /= n;
  };
  for (const auto& row : log.rows) {
    const std::string episode = grouped ? row.fields[c_episode] : name;
    if (out.empty() || out.back().episode != episode) {
      finish();
      out.push_back({episode});
      last_chunk = -1;
    }
    const long long chunk = csv::to_int(row, c_chunk, source);
    if (chunk <= last_chunk)
      throw std::runtime_error(source + ":" + std::to_string(row.line) + ": chunk " + std::to_string(chunk) +
                               " does not follow chunk " + std::to_string(last_chunk));
    last_chunk = chunk;
    auto& s = out.back();
    const double q3 = csv::to_double(row, c_q3, source);
    if (q3 < 0.0) throw std::runtime_error(source + ":" + std::to_string(row.line) + ": negative rebuffer time");
    ++s.chunks;
    s.qoe_mean += csv::to_double(row, c_total, source);
    s.q1_mean += csv::to_double(row, c_q1, source);
    s.q2_mean += csv::to_double(row, c_q2, source);
    s.q3_mean += q3;
    s.rebuffer_total += q3;
    s.r_in_mean += csv::to_double(row, c_rin, source);
    s.buffer_mean += csv::to_double(row, c_buffer, source);
  }
  finish();
  return out;
}

std::string summary_csv(const std::vector<EpisodeSummary>& rows) {
  std::string out = "episode,chunks,qoe_mean,q1_mean,q2_mean,q3_mean,r_in_mean,rebuffer_total,buffer_mean\n";
  for (const auto& s : rows)
    out += s.episode + "," + std::to_string(s.chunks) + "," + csv::format6(s.qoe_mean) + "," +
           csv::format6(s.q1_mean) + "," + csv::format6(s.q2_mean) + "," + csv::format6(s.q3_mean) + "," +
           csv::format6(s.r_in_mean) + "," + csv::format6(s.rebuffer_total) + "," + csv::format6(s.buffer_mean) +
           "\n";
  return out;
}

}  // namespace mansy::report
