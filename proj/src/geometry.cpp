#include "mansy/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mansy {

int TileGrid::tile_at(const ViewportPoint& p) const {
  const int col = std::clamp(static_cast<int>(std::floor(p.x / tile_width())), 0, cols - 1);
  const int row = std::clamp(static_cast<int>(std::floor(p.y / tile_height())), 0, rows - 1);
  return row * cols + col;
}

ViewportPoint TileGrid::tile_center(int tile) const {
  const int row = tile / cols;
  const int col = tile % cols;
  return {(col + 0.5) * tile_width(), (row + 0.5) * tile_height()};
}

bool TileGrid::contains(const ViewportPoint& p) const {
  return p.x >= 0.0 && p.x < video_width && p.y >= 0.0 && p.y < video_height;
}

void TileGrid::validate() const {
  if (rows < 1 || cols < 1) throw std::invalid_argument("tile grid needs at least one row and column");
  if (!(video_width > 0.0) || !(video_height > 0.0))
    throw std::invalid_argument("video dimensions must be positive");
}

void FieldOfView::validate() const {
  auto ok = [](double f) { return f > 0.0 && f <= 1.0; };
  if (!ok(width_fraction) || !ok(height_fraction))
    throw std::invalid_argument("field of view fractions must lie in (0, 1]");
}

TileMask::TileMask(const TileGrid& grid, bool fill)
    : grid_(grid), bits_(static_cast<std::size_t>(grid.tile_count()), fill ? 1 : 0) {}

std::size_t TileMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

TileMask& TileMask::operator|=(const TileMask& other) {
  if (!(grid_ == other.grid_)) throw std::invalid_argument("tile masks belong to different grids");
  for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] |= other.bits_[i];
  return *this;
}

void validate_point(const ViewportPoint& p, const TileGrid& grid) {
  if (!grid.contains(p))
    throw std::invalid_argument("viewport point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                ") outside frame");
}

double wrap_axis_distance(double a, double b, double period) {
  // Reduce |a - b| modulo the period so inputs outside one frame still wrap.
  const double d = std::fmod(std::abs(a - b), period);
  return std::min(d, period - d);
}

double wrap_distance(const ViewportPoint& v, const ViewportPoint& v_hat, const TileGrid& grid) {
  const double dx = wrap_axis_distance(v.x, v_hat.x, grid.video_width);
  const double dy = wrap_axis_distance(v.y, v_hat.y, grid.video_height);
  return (dx * dx + dy * dy) / 2.0;
}

TileMask viewport_tile_mask(const ViewportPoint& center, const FieldOfView& fov, const TileGrid& grid) {
  TileMask mask(grid);
  const double half_w = fov.width_fraction * grid.video_width / 2.0;
  const double span_h = fov.height_fraction * grid.video_height;
  const double top = std::clamp(center.y - span_h / 2.0, 0.0, grid.video_height - span_h);
  const double bottom = top + span_h;
  for (int t = 0; t < grid.tile_count(); ++t) {
    const ViewportPoint c = grid.tile_center(t);
    if (wrap_axis_distance(c.x, center.x, grid.video_width) <= half_w && c.y >= top && c.y <= bottom)
      mask.set(static_cast<std::size_t>(t));
  }
  mask.set(static_cast<std::size_t>(grid.tile_at(wrap_into_frame(center, grid))));
  return mask;
}

TileMask trajectory_tile_mask(std::span<const ViewportPoint> points, const FieldOfView& fov,
                              const TileGrid& grid) {
  TileMask mask(grid);
  for (const auto& p : points) mask |= viewport_tile_mask(p, fov, grid);
  return mask;
}

double iou(const TileMask& a, const TileMask& b) {
  if (!(a.grid() == b.grid()) || a.size() != b.size())
    throw std::invalid_argument("iou: masks belong to different grids");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

ViewportPoint wrap_into_frame(ViewportPoint p, const TileGrid& grid) {
  p.x = std::fmod(p.x, grid.video_width);
  if (p.x < 0.0) p.x += grid.video_width;
  if (p.x >= grid.video_width) p.x = 0.0;
  p.y = std::clamp(p.y, 0.0, std::nextafter(grid.video_height, 0.0));
  return p;
}

}  // namespace mansy
