#include "grouplane/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace grouplane {

namespace {

constexpr double kOrthoTol = 1e-9;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

void CameraRig::validate() const {
  const auto& k = intrinsics;
  if (k[3] != 0.0 || k[6] != 0.0 || k[7] != 0.0) {
    fail("rig: intrinsics must be upper-triangular");
  }
  if (k[0] <= 0.0 || k[4] <= 0.0 || std::fabs(k[8] - 1.0) > kOrthoTol) {
    fail("rig: focal entries must be positive and K[2][2] must be 1");
  }
  const auto& e = extrinsics;
  if (e[12] != 0.0 || e[13] != 0.0 || e[14] != 0.0 || e[15] != 1.0) {
    fail("rig: extrinsics last row must be (0,0,0,1)");
  }
  // R^T R = I and det(R) = +1
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int r = 0; r < 3; ++r) dot += e[r * 4 + i] * e[r * 4 + j];
      const double want = i == j ? 1.0 : 0.0;
      if (std::fabs(dot - want) > kOrthoTol) {
        fail("rig: rotation block is not orthonormal");
      }
    }
  }
  const double det =
      e[0] * (e[5] * e[10] - e[6] * e[9]) - e[1] * (e[4] * e[10] - e[6] * e[8]) +
      e[2] * (e[4] * e[9] - e[5] * e[8]);
  if (std::fabs(det - 1.0) > kOrthoTol) fail("rig: rotation determinant is not +1");
  if (image_height <= 0 || image_width <= 0) fail("rig: image size must be positive");
}

CameraRig make_forward_rig(double height_m, double pitch_deg, double fx,
                           double fy, int image_height, int image_width) {
  CameraRig rig;
  rig.image_height = image_height;
  rig.image_width = image_width;
  rig.intrinsics = {fx, 0.0, image_width / 2.0,
                    0.0, fy, image_height / 2.0,
                    0.0, 0.0, 1.0};
  const double t = pitch_deg * M_PI / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  // columns are the camera axes expressed in ego coordinates:
  // cam x -> ego x; cam y (down) pitches with the view; cam z looks along +y.
  rig.extrinsics = {1.0, 0.0, 0.0, 0.0,
                    0.0, -s,  c,   0.0,
                    0.0, -c,  -s,  height_m,
                    0.0, 0.0, 0.0, 1.0};
  rig.validate();
  return rig;
}

std::optional<PixelPoint> project_unclipped(const Vec3& point,
                                            const CameraRig& rig) {
  const auto& e = rig.extrinsics;
  const double dx = point.x - e[3];
  const double dy = point.y - e[7];
  const double dz = point.z - e[11];
  // camera = R^T (ego - t)
  const double cx = e[0] * dx + e[4] * dy + e[8] * dz;
  const double cy = e[1] * dx + e[5] * dy + e[9] * dz;
  const double cz = e[2] * dx + e[6] * dy + e[10] * dz;
  if (cz <= 0.0) return std::nullopt;
  const auto& k = rig.intrinsics;
  PixelPoint p;
  p.u = (k[0] * cx + k[1] * cy + k[2] * cz) / cz;
  p.v = (k[4] * cy + k[5] * cz) / cz;
  p.depth = cz;
  return p;
}

std::optional<PixelPoint> project_ego_to_image(const Vec3& point,
                                               const CameraRig& rig) {
  auto p = project_unclipped(point, rig);
  if (!p) return std::nullopt;
  if (p->u < 0.0 || p->u >= rig.image_width || p->v < 0.0 ||
      p->v >= rig.image_height) {
    return std::nullopt;
  }
  return p;
}

Vec3 unproject_pixel(double u, double v, double depth, const CameraRig& rig) {
  if (depth <= 0.0) fail("unproject: depth must be positive");
  const auto& k = rig.intrinsics;
  // invert the upper-triangular K
  const double cy = (v - k[5]) / k[4];
  const double cx = (u - k[2] - k[1] * cy) / k[0];
  const double px = cx * depth, py = cy * depth, pz = depth;
  const auto& e = rig.extrinsics;
  return {e[0] * px + e[1] * py + e[2] * pz + e[3],
          e[4] * px + e[5] * py + e[6] * pz + e[7],
          e[8] * px + e[9] * py + e[10] * pz + e[11]};
}

void DepthBins::validate() const {
  if (!(0.0 < d_min && d_min < d_max)) fail("depth bins: need 0 < d_min < d_max");
  if (count < 2) fail("depth bins: need at least 2 bins");
}

void BevGridSpec::validate() const {
  if (!(x_min < x_max && y_min < y_max)) fail("bev grid: empty metric extent");
  if (rows <= 0 || cols <= 0) fail("bev grid: resolution must be positive");
}

}  // namespace grouplane
