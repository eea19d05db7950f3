#pragma once

#include <array>
#include <optional>

namespace grouplane {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

// Ego frame: x lateral (right), y longitudinal (forward), z up, meters.
// Camera frame: x right, y down, z forward (the depth axis).
struct CameraRig {
  std::array<double, 9> intrinsics{};    // row-major 3x3, pixels
  std::array<double, 16> extrinsics{};   // row-major 4x4, camera -> ego
  int image_height = 0;
  int image_width = 0;

  bool operator==(const CameraRig&) const = default;

  // Throws unless the intrinsics are upper-triangular with positive focals
  // and the rotation block is orthonormal with determinant +1 (1e-9).
  void validate() const;
};

// Forward-facing rig: camera at (0, 0, height) looking along +y, pitched
// down by pitch_deg.
CameraRig make_forward_rig(double height_m, double pitch_deg, double fx,
                           double fy, int image_height, int image_width);

struct PixelPoint {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // camera-frame forward coordinate
};

// Projection that reports points behind the camera or outside the image as
// absent.
std::optional<PixelPoint> project_ego_to_image(const Vec3& point,
                                               const CameraRig& rig);

// Unclipped projection for rendering: absent only when depth <= 0.
std::optional<PixelPoint> project_unclipped(const Vec3& point,
                                            const CameraRig& rig);

// Exact inverse of the projection for in-view points. Throws on depth <= 0.
Vec3 unproject_pixel(double u, double v, double depth, const CameraRig& rig);

struct DepthBins {
  double d_min = 1.0;
  double d_max = 60.0;
  int count = 32;

  bool operator==(const DepthBins&) const = default;

  void validate() const;
  double center(int i) const {
    const double step = (d_max - d_min) / count;
    return d_min + (i + 0.5) * step;
  }
};

// Metric extent and resolution of the BEV grid. Rows index the longitudinal
// (y) axis, columns the lateral (x) axis.
struct BevGridSpec {
  double x_min = -10.0;
  double x_max = 10.0;
  double y_min = 3.0;
  double y_max = 103.0;
  int rows = 24;   // H_b
  int cols = 100;  // W_b

  bool operator==(const BevGridSpec&) const = default;

  void validate() const;

  double cell_w() const { return (x_max - x_min) / cols; }
  double cell_h() const { return (y_max - y_min) / rows; }
  double row_center(int r) const { return y_min + (r + 0.5) * cell_h(); }
  double col_center(int c) const { return x_min + (c + 0.5) * cell_w(); }

  // Half-open cell membership; -1 outside.
  int row_of(double y) const {
    if (y < y_min || y >= y_max) return -1;
    const int r = static_cast<int>((y - y_min) / cell_h());
    return r >= rows ? rows - 1 : r;
  }
  int col_of(double x) const {
    if (x < x_min || x >= x_max) return -1;
    const int c = static_cast<int>((x - x_min) / cell_w());
    return c >= cols ? cols - 1 : c;
  }
  bool contains(double x, double y) const {
    return row_of(y) >= 0 && col_of(x) >= 0;
  }

  BevGridSpec transposed() const {
    BevGridSpec t;
    t.x_min = y_min;
    t.x_max = y_max;
    t.y_min = x_min;
    t.y_max = x_max;
    t.rows = cols;
    t.cols = rows;
    return t;
  }
};

}  // namespace grouplane
