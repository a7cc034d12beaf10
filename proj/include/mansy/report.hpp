#pragma once

// Summaries of episode logs and PNG charts of the CSV reports.

#include "mansy/csv.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mansy::report {

struct EpisodeSummary {
  std::string episode;
  int chunks = 0;
  double qoe_mean = 0.0;
  double q1_mean = 0.0;
  double q2_mean = 0.0;
  double q3_mean = 0.0;
  double r_in_mean = 0.0;
  double rebuffer_total = 0.0;
  double buffer_mean = 0.0;
};

/// One summary per episode of an episode log (`chunk,r_in,r_out,l_c,q1,q2,q3,
/// qoe_total,buffer`). With an `episode` column, consecutive rows sharing a
/// value form an episode; otherwise the whole log is one episode called
/// `name`. Errors name the source and line of the offending row.
std::vector<EpisodeSummary> summarize_episode_log(const csv::Table& log, const std::string& source,
                                                  const std::string& name);

/// CSV `episode,chunks,qoe_mean,q1_mean,q2_mean,q3_mean,r_in_mean,rebuffer_total,buffer_mean`.
std::string summary_csv(const std::vector<EpisodeSummary>& rows);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

/// RGB raster with a 5x7 bitmap font.
class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});

  int width() const { return width_; }
  int height() const { return height_; }
  Rgb at(int x, int y) const;

  void set(int x, int y, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c, int thickness = 1);
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  /// Upper-left corner at (x, y); `scale` multiplies the glyph size.
  void text(int x, int y, const std::string& s, Rgb c, int scale = 1);
  static int text_width(const std::string& s, int scale = 1) { return static_cast<int>(s.size()) * 6 * scale; }

  void write_png(const std::filesystem::path& path) const;

 private:
  int width_, height_;
  std::vector<std::uint8_t> pixels_;
};

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title, x_label, y_label;
  std::vector<Series> series;
};

/// Grouped bars: series[s].y[c] is the bar of series s in category c.
struct BarChart {
  std::string title, y_label;
  std::vector<std::string> categories;
  std::vector<Series> series;
};

Canvas render(const LineChart& chart);
Canvas render(const BarChart& chart);

/// Draws the chart matching the table's layout (accuracy report, training
/// diagnostics, evaluation report, episode summary or episode log; any other
/// table is drawn as numeric columns against the first one). Returns false
/// and writes nothing when the table has no rows.
bool plot_table(const csv::Table& table, const std::string& source, const std::filesystem::path& out);

}  // namespace mansy::report
