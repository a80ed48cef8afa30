#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "xreg/errors.hpp"

namespace xreg {

struct Vec2 {
  double x = 0.0, y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return (x * o.x + y * o.y) + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double squared_norm() const { return (x * x + y * y) + z * z; }
  double norm() const { return std::sqrt(squared_norm()); }
  Vec3 normalized() const {
    const double n = norm();
    if (n == 0.0) throw ZeroVector();
    return {x / n, y / n, z / n};
  }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double squared_distance(const Vec3& a, const Vec3& b) { return (a - b).squared_norm(); }

// Pinhole model: continuous pixel coordinates, integer coordinates sit at
// pixel centers.
struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw Error("intrinsics: focal lengths must be positive");
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
      throw Error("intrinsics: principal point outside image");
  }
};

// Rotation stored row-major.
struct RigidTransform {
  std::array<double, 9> rotation = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 translation = {0, 0, 0};

  static RigidTransform identity() { return {}; }

  // Max deviation of R^T R from I plus |det - 1|.
  double orthonormality_error() const;
  void validate(double tol = 1e-9) const;
};

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

// Depth in meters; NaN / non-positive entries are invalid.
struct DepthMap {
  int height = 0, width = 0;
  std::vector<float> values;

  DepthMap() = default;
  DepthMap(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, std::numeric_limits<float>::quiet_NaN()) {}

  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
  bool valid(int r, int c) const {
    if (r < 0 || c < 0 || r >= height || c >= width) return false;
    const float d = at(r, c);
    return std::isfinite(d) && d > 0.0f;
  }
  std::size_t valid_count() const;
};

Vec2 project(const Vec3& p, const CameraIntrinsics& k);
Vec3 unproject(const Vec2& pixel, double depth, const CameraIntrinsics& k);

Vec3 apply_transform(const RigidTransform& t, const Vec3& p);
PointCloud apply_transform(const RigidTransform& t, const PointCloud& pc);

// compose(a, b) applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

// One barycenter per occupied voxel; voxel index is floor(coord / voxel).
// Output keeps first-occurrence voxel order.
PointCloud grid_subsample(const PointCloud& pc, double voxel);

struct DepthFrame {
  const DepthMap* depth;
  CameraIntrinsics intrinsics;
  RigidTransform camera_to_world;
};

// Unprojects all valid pixels of every frame into the world frame and
// grid-subsamples the concatenation.
PointCloud fuse_depth_frames(const std::vector<DepthFrame>& frames, double voxel);

}  // namespace xreg
