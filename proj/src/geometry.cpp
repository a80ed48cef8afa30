#include "xreg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace xreg {

std::size_t DepthMap::valid_count() const {
  std::size_t n = 0;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      if (valid(r, c)) ++n;
  return n;
}

double RigidTransform::orthonormality_error() const {
  const auto& m = rotation;
  double err = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int l = 0; l < 3; ++l) dot += m[l * 3 + i] * m[l * 3 + j];
      err = std::max(err, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  return err + std::abs(det - 1.0);
}

void RigidTransform::validate(double tol) const {
  if (orthonormality_error() > tol) throw Error("rotation is not orthonormal with det +1");
  if (!translation.finite()) throw Error("translation is not finite");
}

Vec2 project(const Vec3& p, const CameraIntrinsics& k) {
  if (!(p.z > 0.0)) throw BehindCamera();
  return {k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy};
}

Vec3 unproject(const Vec2& pixel, double depth, const CameraIntrinsics& k) {
  if (!(depth > 0.0) || !std::isfinite(depth)) throw InvalidDepth();
  return {(pixel.x - k.cx) / k.fx * depth, (pixel.y - k.cy) / k.fy * depth, depth};
}

Vec3 apply_transform(const RigidTransform& t, const Vec3& p) {
  const auto& m = t.rotation;
  return {((m[0] * p.x + m[1] * p.y) + m[2] * p.z) + t.translation.x,
          ((m[3] * p.x + m[4] * p.y) + m[5] * p.z) + t.translation.y,
          ((m[6] * p.x + m[7] * p.y) + m[8] * p.z) + t.translation.z};
}

PointCloud apply_transform(const RigidTransform& t, const PointCloud& pc) {
  PointCloud out;
  out.points.reserve(pc.size());
  for (const Vec3& p : pc.points) out.points.push_back(apply_transform(t, p));
  return out;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int l = 0; l < 3; ++l) s += a.rotation[i * 3 + l] * b.rotation[l * 3 + j];
      out.rotation[i * 3 + j] = s;
    }
  }
  out.translation = apply_transform(a, b.translation);
  return out;
}

RigidTransform invert(const RigidTransform& t) {
  RigidTransform out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.rotation[i * 3 + j] = t.rotation[j * 3 + i];
  const Vec3 p = {-t.translation.x, -t.translation.y, -t.translation.z};
  const auto& m = out.rotation;
  out.translation = {(m[0] * p.x + m[1] * p.y) + m[2] * p.z,
                     (m[3] * p.x + m[4] * p.y) + m[5] * p.z,
                     (m[6] * p.x + m[7] * p.y) + m[8] * p.z};
  return out;
}

namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::int64_t v : {k.x, k.y, k.z}) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

PointCloud grid_subsample(const PointCloud& pc, double voxel) {
  if (pc.empty()) throw EmptyInput("grid_subsample: empty point cloud");
  if (!(voxel > 0.0)) throw Error("grid_subsample: voxel size must be positive");

  struct Cell {
    Vec3 sum = {0, 0, 0};
    std::size_t count = 0;
    std::size_t order = 0;
  };
  std::unordered_map<VoxelKey, Cell, VoxelKeyHash> cells;
  cells.reserve(pc.size());
  std::size_t next_order = 0;
  for (const Vec3& p : pc.points) {
    if (!p.finite()) throw Error("grid_subsample: non-finite coordinate");
    const VoxelKey key{static_cast<std::int64_t>(std::floor(p.x / voxel)),
                       static_cast<std::int64_t>(std::floor(p.y / voxel)),
                       static_cast<std::int64_t>(std::floor(p.z / voxel))};
    auto [it, inserted] = cells.try_emplace(key);
    if (inserted) it->second.order = next_order++;
    it->second.sum = it->second.sum + p;
    it->second.count += 1;
  }

  std::vector<const Cell*> ordered(cells.size());
  for (const auto& [key, cell] : cells) ordered[cell.order] = &cell;

  PointCloud out;
  out.points.reserve(ordered.size());
  for (const Cell* cell : ordered)
    out.points.push_back(cell->sum * (1.0 / static_cast<double>(cell->count)));
  return out;
}

PointCloud fuse_depth_frames(const std::vector<DepthFrame>& frames, double voxel) {
  if (frames.empty()) throw EmptyInput("fuse_depth_frames: no frames");
  PointCloud merged;
  for (const DepthFrame& f : frames) {
    const DepthMap& d = *f.depth;
    for (int r = 0; r < d.height; ++r) {
      for (int c = 0; c < d.width; ++c) {
        if (!d.valid(r, c)) continue;
        const Vec3 cam = unproject({static_cast<double>(c), static_cast<double>(r)}, d.at(r, c), f.intrinsics);
        merged.points.push_back(apply_transform(f.camera_to_world, cam));
      }
    }
  }
  if (merged.empty()) throw EmptyInput("fuse_depth_frames: no valid pixels");
  return grid_subsample(merged, voxel);
}

}  // namespace xreg
