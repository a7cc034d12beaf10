#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mansy {

/// Viewport center in equirectangular pixel coordinates.
struct ViewportPoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const ViewportPoint&, const ViewportPoint&) = default;
};

/// Ordered viewport samples taken every `timestep_duration` seconds.
struct Trajectory {
  std::vector<ViewportPoint> points;
  double timestep_duration = 0.2;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Spatial tiling of an equirectangular frame. Tiles are numbered row-major.
struct TileGrid {
  int rows = 8;
  int cols = 8;
  double video_width = 1920.0;
  double video_height = 960.0;

  int tile_count() const { return rows * cols; }
  double tile_width() const { return video_width / cols; }
  double tile_height() const { return video_height / rows; }

  /// Index of the tile whose cell contains `p`.
  int tile_at(const ViewportPoint& p) const;
  ViewportPoint tile_center(int tile) const;
  bool contains(const ViewportPoint& p) const;
  /// Throws std::invalid_argument unless rows, cols and both dimensions are positive.
  void validate() const;

  friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

/// Field of view as fractions of the frame.
struct FieldOfView {
  double width_fraction = 0.33;
  double height_fraction = 0.33;

  void validate() const;
};

/// One bit per tile, row-major over the owning grid.
class TileMask {
 public:
  TileMask() = default;
  explicit TileMask(const TileGrid& grid, bool fill = false);

  const TileGrid& grid() const { return grid_; }
  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t tile) const { return bits_[tile] != 0; }
  void set(std::size_t tile, bool on = true) { bits_[tile] = on ? 1 : 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }

  /// Tile-wise OR; grids must match.
  TileMask& operator|=(const TileMask& other);

  friend bool operator==(const TileMask&, const TileMask&) = default;

 private:
  TileGrid grid_;
  std::vector<std::uint8_t> bits_;
};

/// Throws std::invalid_argument if `p` lies outside [0,W) x [0,H).
void validate_point(const ViewportPoint& p, const TileGrid& grid);

/// min(|a-b|, |a+period-b|, |a-period-b|)
double wrap_axis_distance(double a, double b, double period);

/// Periodic squared distance (Dist_x^2 + Dist_y^2) / 2. Both axes use the
/// three-candidate wrap form, matching the training loss.
double wrap_distance(const ViewportPoint& v, const ViewportPoint& v_hat, const TileGrid& grid);

/// Tiles whose centers fall inside the FoV rectangle around `center`. The
/// rectangle wraps horizontally and is shifted back inside the frame
/// vertically. The tile containing `center` is always marked.
TileMask viewport_tile_mask(const ViewportPoint& center, const FieldOfView& fov, const TileGrid& grid);

/// Union of the viewport masks of every point in `points`.
TileMask trajectory_tile_mask(std::span<const ViewportPoint> points, const FieldOfView& fov,
                              const TileGrid& grid);

/// |a and b| / |a or b|; 1 when both masks are empty.
double iou(const TileMask& a, const TileMask& b);

/// Reduces x modulo the frame width and clamps y into [0, H).
ViewportPoint wrap_into_frame(ViewportPoint p, const TileGrid& grid);

}  // namespace mansy
