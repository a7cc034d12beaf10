#include "mansy/report.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>

namespace mansy::report {

namespace {

// 5x7 glyphs, one byte per row, bit 4 is the leftmost column.
using Glyph = std::array<std::uint8_t, 7>;

const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> glyphs = {
      {' ', {0, 0, 0, 0, 0, 0, 0}},
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
      {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
      {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
      {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
      {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0, 0, 0, 0, 0, 0x0C, 0x0C}},
      {',', {0, 0, 0, 0, 0x0C, 0x04, 0x08}},
      {'-', {0, 0, 0, 0x1F, 0, 0, 0}},
      {'_', {0, 0, 0, 0, 0, 0, 0x1F}},
      {'/', {0, 0x01, 0x02, 0x04, 0x08, 0x10, 0}},
      {':', {0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'=', {0, 0, 0x1F, 0, 0x1F, 0, 0}},
      {'+', {0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0}},
      {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
      {'?', {0x0E, 0x11, 0x01, 0x02, 0x04, 0, 0x04}},
  };
  return glyphs;
}

const Glyph& glyph(char c) {
  const auto& f = font();
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  const auto it = f.find(c);
  return it == f.end() ? f.at('?') : it->second;
}

constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kGrid{225, 225, 225};
constexpr std::array<Rgb, 8> kPalette{{{31, 119, 180},
                                       {255, 127, 14},
                                       {44, 160, 44},
                                       {214, 39, 40},
                                       {148, 103, 189},
                                       {140, 86, 75},
                                       {227, 119, 194},
                                       {127, 127, 127}}};

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void include(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void settle() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
      const double pad = std::max(std::abs(lo) * 0.1, 0.5);
      lo -= pad;
      hi += pad;
    }
  }
};

// Plot area inside the canvas, with a right-hand legend column.
struct Frame {
  int left = 80, top = 52, right, bottom;
  Range xr, yr;

  Frame(const Canvas& c, int legend_width) : right(c.width() - legend_width), bottom(c.height() - 60) {}
  int px(double x) const { return left + static_cast<int>(std::lround((x - xr.lo) / (xr.hi - xr.lo) * (right - left))); }
  int py(double y) const {
    return bottom - static_cast<int>(std::lround((y - yr.lo) / (yr.hi - yr.lo) * (bottom - top)));
  }
};

void draw_axes(Canvas& c, const Frame& f, const std::string& title, const std::string& y_label, bool x_ticks) {
  for (int i = 0; i <= 4; ++i) {
    const double y = f.yr.lo + (f.yr.hi - f.yr.lo) * i / 4.0;
    const int yy = f.py(y);
    c.line(f.left, yy, f.right, yy, kGrid);
    const std::string lab = tick_label(y);
    c.text(f.left - 6 - Canvas::text_width(lab), yy - 3, lab, kBlack);
    if (x_ticks) {
      const double x = f.xr.lo + (f.xr.hi - f.xr.lo) * i / 4.0;
      const int xx = f.px(x);
      c.line(xx, f.bottom, xx, f.bottom + 4, kBlack);
      const std::string xl = tick_label(x);
      c.text(xx - Canvas::text_width(xl) / 2, f.bottom + 8, xl, kBlack);
    }
  }
  c.line(f.left, f.top, f.left, f.bottom, kBlack);
  c.line(f.left, f.bottom, f.right, f.bottom, kBlack);
  c.text(f.left, 12, title, kBlack, 2);
  c.text(4, f.top - 14, y_label, kBlack);
}

void draw_legend(Canvas& c, const Frame& f, const std::vector<Series>& series) {
  for (std::size_t s = 0; s < series.size(); ++s) {
    const int y = f.top + 8 + static_cast<int>(s) * 16;
    c.fill_rect(f.right + 16, y, f.right + 28, y + 8, kPalette[s % kPalette.size()]);
    c.text(f.right + 34, y + 1, series[s].label, kBlack);
  }
}

int legend_width(const std::vector<Series>& series) {
  int w = 0;
  for (const auto& s : series) w = std::max(w, Canvas::text_width(s.label));
  return w + 50;
}

}  // namespace

Canvas::Canvas(int width, int height, Rgb background)
    : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height * 3) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("canvas dimensions must be positive");
  for (std::size_t i = 0; i < pixels_.size(); i += 3) {
    pixels_[i] = background.r;
    pixels_[i + 1] = background.g;
    pixels_[i + 2] = background.b;
  }
}

Rgb Canvas::at(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {pixels_.at(i), pixels_.at(i + 1), pixels_.at(i + 2)};
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  pixels_[i] = c.r;
  pixels_[i + 1] = c.g;
  pixels_[i + 2] = c.b;
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c, int thickness) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  const int r = (thickness - 1) / 2;
  while (true) {
    for (int oy = -r; oy <= thickness - 1 - r; ++oy)
      for (int ox = -r; ox <= thickness - 1 - r; ++ox) set(x0 + ox, y0 + oy, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) set(x, y, c);
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
  for (std::size_t k = 0; k < s.size(); ++k) {
    const Glyph& g = glyph(s[k]);
    const int gx = x + static_cast<int>(k) * 6 * scale;
    for (int row = 0; row < 7; ++row)
      for (int col = 0; col < 5; ++col)
        if (g[static_cast<std::size_t>(row)] & (0x10 >> col))
          fill_rect(gx + col * scale, y + row * scale, gx + (col + 1) * scale - 1, y + (row + 1) * scale - 1, c);
  }
}

void Canvas::write_png(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width_), static_cast<png_uint_32>(height_), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height_; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels_.data() + static_cast<std::size_t>(y) * width_ * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Canvas render(const LineChart& chart) {
  Canvas c(640 + legend_width(chart.series), 420);
  Frame f(c, legend_width(chart.series));
  for (const auto& s : chart.series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("series '" + s.label + "' has unequal x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      f.xr.include(s.x[i]);
      f.yr.include(s.y[i]);
    }
  }
  f.xr.settle();
  f.yr.settle();
  draw_axes(c, f, chart.title, chart.y_label, true);
  c.text((f.left + f.right - Canvas::text_width(chart.x_label)) / 2, f.bottom + 26, chart.x_label, kBlack);
  for (std::size_t si = 0; si < chart.series.size(); ++si) {
    const auto& s = chart.series[si];
    const Rgb col = kPalette[si % kPalette.size()];
    bool have_prev = false;
    int px = 0, py = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) {
        have_prev = false;
        continue;
      }
      const int x = f.px(s.x[i]), y = f.py(s.y[i]);
      if (have_prev) c.line(px, py, x, y, col, 2);
      c.fill_rect(x - 2, y - 2, x + 2, y + 2, col);
      px = x;
      py = y;
      have_prev = true;
    }
  }
  draw_legend(c, f, chart.series);
  return c;
}

Canvas render(const BarChart& chart) {
  int label_w = 0;
  for (const auto& cat : chart.categories) label_w = std::max(label_w, Canvas::text_width(cat));
  const int slot = std::max(label_w + 16, 24 * static_cast<int>(chart.series.size()) + 16);
  const int lw = legend_width(chart.series);
  Canvas c(std::max(640, 100 + slot * static_cast<int>(chart.categories.size())) + lw, 420);
  Frame f(c, lw);
  f.yr.include(0.0);
  for (const auto& s : chart.series) {
    if (s.y.size() != chart.categories.size())
      throw std::invalid_argument("series '" + s.label + "' does not have one value per category");
    for (double v : s.y) f.yr.include(v);
  }
  f.yr.settle();
  draw_axes(c, f, chart.title, chart.y_label, false);
  const double width = static_cast<double>(f.right - f.left) / std::max<std::size_t>(1, chart.categories.size());
  const int bar = std::max(2, static_cast<int>((width - 12) / std::max<std::size_t>(1, chart.series.size())));
  const int zero = f.py(0.0);
  for (std::size_t k = 0; k < chart.categories.size(); ++k) {
    const int x0 = f.left + static_cast<int>(k * width) + 6;
    for (std::size_t s = 0; s < chart.series.size(); ++s) {
      const double v = chart.series[s].y[k];
      if (!std::isfinite(v)) continue;
      const int bx = x0 + static_cast<int>(s) * bar;
      c.fill_rect(bx, f.py(v), bx + bar - 2, zero, kPalette[s % kPalette.size()]);
    }
    const auto& cat = chart.categories[k];
    c.text(f.left + static_cast<int>((k + 0.5) * width) - Canvas::text_width(cat) / 2, f.bottom + 8, cat, kBlack);
  }
  c.line(f.left, zero, f.right, zero, kBlack);
  draw_legend(c, f, chart.series);
  return c;
}

namespace {

bool has(const csv::Table& t, const std::string& col) {
  return std::find(t.header.begin(), t.header.end(), col) != t.header.end();
}

std::vector<double> numbers(const csv::Table& t, const std::string& col, const std::string& source) {
  const std::size_t c = t.column(col);
  std::vector<double> out;
  for (const auto& row : t.rows) out.push_back(csv::to_double(row, c, source));
  return out;
}

// Groups rows by a label column, averaging `columns` within each group in
// order of first appearance.
BarChart grouped_means(const csv::Table& t, const std::string& source, const std::string& key,
                       const std::vector<std::string>& columns) {
  BarChart chart;
  std::vector<int> counts;
  const std::size_t kc = t.column(key);
  for (const auto& col : columns) chart.series.push_back({col, {}, {}});
  for (const auto& row : t.rows) {
    const auto it = std::find(chart.categories.begin(), chart.categories.end(), row.fields[kc]);
    const auto k = static_cast<std::size_t>(it - chart.categories.begin());
    if (it == chart.categories.end()) {
      chart.categories.push_back(row.fields[kc]);
      counts.push_back(0);
      for (auto& s : chart.series) s.y.push_back(0.0);
    }
    ++counts[k];
    for (std::size_t s = 0; s < columns.size(); ++s)
      chart.series[s].y[k] += csv::to_double(row, t.column(columns[s]), source);
  }
  for (auto& s : chart.series)
    for (std::size_t k = 0; k < s.y.size(); ++k) s.y[k] /= counts[k];
  return chart;
}

}  // namespace

bool plot_table(const csv::Table& t, const std::string& source, const std::filesystem::path& out) {
  if (t.rows.empty()) return false;
  if (has(t, "family") && has(t, "horizon_step") && has(t, "mean_iou")) {
    LineChart chart{"Viewport accuracy by horizon", "horizon step", "mean IoU", {}};
    const std::size_t fc = t.column("family");
    const auto steps = numbers(t, "horizon_step", source), iou = numbers(t, "mean_iou", source);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const std::string& fam = t.rows[i].fields[fc];
      auto it = std::find_if(chart.series.begin(), chart.series.end(), [&](const Series& s) { return s.label == fam; });
      if (it == chart.series.end()) it = chart.series.insert(chart.series.end(), Series{fam, {}, {}});
      it->x.push_back(steps[i]);
      it->y.push_back(iou[i]);
    }
    render(chart).write_png(out);
  } else if (has(t, "iter") && has(t, "identifier_mse")) {
    LineChart chart{"Training progress", "iteration", "value", {}};
    const auto it = numbers(t, "iter", source);
    for (const char* col : {"mean_qoe", "mean_reward", "identifier_mse"})
      if (has(t, col)) chart.series.push_back({col, it, numbers(t, col, source)});
    render(chart).write_png(out);
  } else if (has(t, "preference") && has(t, "qoe_mean")) {
    BarChart chart = grouped_means(t, source, "preference", {"qoe_mean", "q1_mean", "q2_mean", "q3_mean"});
    chart.title = "QoE by preference";
    chart.y_label = "mean per chunk";
    render(chart).write_png(out);
  } else if (has(t, "episode") && has(t, "qoe_mean")) {
    BarChart chart = grouped_means(t, source, "episode", {"qoe_mean", "q1_mean", "q2_mean", "q3_mean"});
    chart.title = "QoE by episode";
    chart.y_label = "mean per chunk";
    render(chart).write_png(out);
  } else if (has(t, "chunk") && has(t, "qoe_total")) {
    LineChart chart{"Episode", "chunk", "value", {}};
    const auto x = numbers(t, "chunk", source);
    for (const char* col : {"qoe_total", "r_in", "buffer"})
      if (has(t, col)) chart.series.push_back({col, x, numbers(t, col, source)});
    render(chart).write_png(out);
  } else {
    LineChart chart{source, t.header.front(), "value", {}};
    const auto x = numbers(t, t.header.front(), source);
    for (std::size_t c = 1; c < t.header.size(); ++c) chart.series.push_back({t.header[c], x, numbers(t, t.header[c], source)});
    render(chart).write_png(out);
  }
  return true;
}

}  // namespace mansy::report
