#include "xreg/groundtruth.hpp"

#include <algorithm>
#include <cmath>

namespace xreg {
namespace {

std::uint64_t cell_key(std::int64_t x, std::int64_t y, std::int64_t z) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::int64_t v : {x, y, z}) {
    h ^= static_cast<std::uint64_t>(v) * 0x9e3779b97f4a7c15ULL;
    h *= 1099511628211ULL;
  }
  return h;
}

std::int64_t cell_of(double v, double cell) { return static_cast<std::int64_t>(std::floor(v / cell)); }

}  // namespace

PairLabel label_patch_pair(double overlap_2d, double overlap_3d, const OverlapThresholds& th) {
  if (overlap_2d >= th.patch_pos && overlap_3d >= th.patch_pos) return PairLabel::Positive;
  if (overlap_2d < th.patch_neg && overlap_3d < th.patch_neg) return PairLabel::Negative;
  return PairLabel::Ignore;
}

PairLabel label_pixel_point(double dist3d, double dist2d, const OverlapThresholds& th) {
  if (dist3d < th.fine_pos3d && dist2d < th.fine_pos2d) return PairLabel::Positive;
  if (dist3d > th.fine_neg3d || dist2d > th.fine_neg2d) return PairLabel::Negative;
  return PairLabel::Ignore;
}

OverlapContext::OverlapContext(const DepthMap& depth, const CameraIntrinsics& k,
                               const RigidTransform& cloud_to_camera, const PointCloud& cloud,
                               const OverlapThresholds& th)
    : depth_(&depth), k_(k), th_(th) {
  const std::size_t n_px = static_cast<std::size_t>(depth.height) * depth.width;
  pixel_points_.resize(n_px);
  pixel_valid_.assign(n_px, 0);
  for (int r = 0; r < depth.height; ++r) {
    for (int c = 0; c < depth.width; ++c) {
      if (!depth.valid(r, c)) continue;
      const std::size_t idx = static_cast<std::size_t>(r) * depth.width + c;
      pixel_points_[idx] = unproject({static_cast<double>(c), static_cast<double>(r)}, depth.at(r, c), k);
      pixel_valid_[idx] = 1;
    }
  }

  cam_points_.reserve(cloud.size());
  proj_.resize(cloud.size());
  proj_valid_.assign(cloud.size(), 0);
  cell_ = th.dist3d;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 p = apply_transform(cloud_to_camera, cloud.points[i]);
    cam_points_.push_back(p);
    if (p.z > 0.0) {
      proj_[i] = project(p, k);
      proj_valid_[i] = 1;
    }
    grid_[cell_key(cell_of(p.x, cell_), cell_of(p.y, cell_), cell_of(p.z, cell_))].push_back(static_cast<int>(i));
  }
}

bool OverlapContext::point_overlapped(int point_idx, int pixel_r, int pixel_c) const {
  if (!depth_->valid(pixel_r, pixel_c)) return false;
  if (!proj_valid_[point_idx]) return false;
  const std::size_t idx = static_cast<std::size_t>(pixel_r) * width() + pixel_c;
  const double d3 = (cam_points_[point_idx] - pixel_points_[idx]).norm();
  if (!(d3 < th_.dist3d)) return false;
  const Vec2 px{static_cast<double>(pixel_c), static_cast<double>(pixel_r)};
  const double d2 = (proj_[point_idx] - px).norm();
  return d2 < th_.dist2d;
}

void OverlapContext::candidates_near_pixel(int pixel_r, int pixel_c, std::vector<int>& out) const {
  out.clear();
  const std::size_t idx = static_cast<std::size_t>(pixel_r) * width() + pixel_c;
  if (!pixel_valid_[idx]) return;
  const Vec3& q = pixel_points_[idx];
  const std::int64_t gx = cell_of(q.x, cell_), gy = cell_of(q.y, cell_), gz = cell_of(q.z, cell_);
  for (std::int64_t dx = -1; dx <= 1; ++dx) {
    for (std::int64_t dy = -1; dy <= 1; ++dy) {
      for (std::int64_t dz = -1; dz <= 1; ++dz) {
        auto it = grid_.find(cell_key(gx + dx, gy + dy, gz + dz));
        if (it == grid_.end()) continue;
        for (int pi : it->second) {
          if ((cam_points_[pi] - q).norm() < th_.dist3d) out.push_back(pi);
        }
      }
    }
  }
}

PatchOverlap compute_patch_overlap(const OverlapContext& ctx, const ImagePatchGrid& grid, int patch_row,
                                   int patch_col, const std::vector<int>& member_points) {
  const auto range = grid.patch_pixels(patch_row, patch_col);
  const OverlapThresholds& th = ctx.thresholds();

  // Pixel side: fraction of valid pixels with an overlapping member point.
  std::vector<std::uint8_t> is_member;
  if (!member_points.empty()) {
    is_member.assign(ctx.point_count(), 0);
    for (int pi : member_points) is_member[pi] = 1;
  }
  std::size_t valid_px = 0, overlapped_px = 0;
  std::vector<int> candidates;
  for (int r = range.r0; r < range.r1; ++r) {
    for (int c = range.c0; c < range.c1; ++c) {
      if (!ctx.pixel_has_valid_depth(r, c)) continue;
      ++valid_px;
      ctx.candidates_near_pixel(r, c, candidates);
      const Vec2 px{static_cast<double>(c), static_cast<double>(r)};
      for (int pi : candidates) {
        if (!is_member.empty() && !is_member[pi]) continue;
        if (!ctx.projection_valid(pi)) continue;
        if ((ctx.projected_pixel(pi) - px).norm() < th.dist2d) {
          ++overlapped_px;
          break;
        }
      }
    }
  }

  // Point side: fraction of members with an overlapping patch pixel.
  std::size_t overlapped_pt = 0;
  for (int pi : member_points) {
    if (!ctx.projection_valid(pi)) continue;
    const Vec2& proj = ctx.projected_pixel(pi);
    const int c0 = std::max(range.c0, static_cast<int>(std::ceil(proj.x - th.dist2d)));
    const int c1 = std::min(range.c1 - 1, static_cast<int>(std::floor(proj.x + th.dist2d)));
    const int r0 = std::max(range.r0, static_cast<int>(std::ceil(proj.y - th.dist2d)));
    const int r1 = std::min(range.r1 - 1, static_cast<int>(std::floor(proj.y + th.dist2d)));
    bool hit = false;
    for (int r = r0; r <= r1 && !hit; ++r)
      for (int c = c0; c <= c1 && !hit; ++c)
        if (ctx.point_overlapped(pi, r, c)) hit = true;
    if (hit) ++overlapped_pt;
  }

  PatchOverlap result;
  if (valid_px > 0) result.overlap_2d = static_cast<double>(overlapped_px) / static_cast<double>(valid_px);
  if (!member_points.empty())
    result.overlap_3d = static_cast<double>(overlapped_pt) / static_cast<double>(member_points.size());
  result.final_overlap = std::min(result.overlap_2d, result.overlap_3d);
  return result;
}

PairLabelTable compute_pair_labels(const OverlapContext& ctx, const PatchPyramid& pyramid,
                                   const PointPatchGraph& graph) {
  PairLabelTable table;
  const int levels = pyramid.level_count();
  const int node_count = static_cast<int>(graph.nodes.size());
  table.node_count = node_count;
  table.coarse.resize(levels);

  const OverlapThresholds& th = ctx.thresholds();
  const int w = ctx.width(), h = ctx.height();

  // Enumerate bilateral-overlapping (pixel, point) pairs once. The spatial
  // grid cell equals dist3d, so a fine positive band larger than dist3d would
  // be missed; the defaults keep them equal.
  struct RawPair {
    int pixel;
    int point;
    std::uint8_t coarse_ok;
    std::uint8_t fine_ok;
  };
  std::vector<RawPair> pairs;
  std::vector<int> candidates;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!ctx.pixel_has_valid_depth(r, c)) continue;
      ctx.candidates_near_pixel(r, c, candidates);
      if (candidates.empty()) continue;
      const Vec2 px{static_cast<double>(c), static_cast<double>(r)};
      const Vec3& q = ctx.pixel_camera_point(r, c);
      for (int pi : candidates) {
        if (!ctx.projection_valid(pi)) continue;
        const double d3 = (ctx.camera_point(pi) - q).norm();
        const double d2 = (ctx.projected_pixel(pi) - px).norm();
        const bool coarse_ok = d3 < th.dist3d && d2 < th.dist2d;
        const bool fine_ok = d3 < th.fine_pos3d && d2 < th.fine_pos2d;
        if (coarse_ok || fine_ok) {
          pairs.push_back({r * w + c, pi, static_cast<std::uint8_t>(coarse_ok), static_cast<std::uint8_t>(fine_ok)});
          if (fine_ok) table.fine_positives.push_back({r, c, pi});
        }
      }
    }
  }

  // Pixel side: count, per (level, patch, node), the pixels with >= 1
  // overlapping member of that node.
  std::vector<std::unordered_map<std::uint64_t, int>> count_2d(levels), count_3d(levels);
  {
    std::vector<int> nodes_of_pixel;
    std::size_t i = 0;
    while (i < pairs.size()) {
      const int pixel = pairs[i].pixel;
      nodes_of_pixel.clear();
      for (; i < pairs.size() && pairs[i].pixel == pixel; ++i) {
        if (pairs[i].coarse_ok) nodes_of_pixel.push_back(graph.assignment[pairs[i].point]);
      }
      std::sort(nodes_of_pixel.begin(), nodes_of_pixel.end());
      nodes_of_pixel.erase(std::unique(nodes_of_pixel.begin(), nodes_of_pixel.end()), nodes_of_pixel.end());
      if (nodes_of_pixel.empty()) continue;
      const int pr = pixel / w, pc = pixel % w;
      for (int l = 0; l < levels; ++l) {
        const auto& g = pyramid.levels[l];
        const int patch = g.patch_index(g.patch_row_of_pixel(pr), g.patch_col_of_pixel(pc));
        for (int n : nodes_of_pixel)
          count_2d[l][static_cast<std::uint64_t>(patch) * node_count + n] += 1;
      }
    }
  }

  // Point side: count, per (level, patch, node), the members with >= 1
  // overlapping pixel inside that patch.
  {
    std::vector<std::pair<int, int>> by_point;  // (point, pixel)
    by_point.reserve(pairs.size());
    for (const RawPair& p : pairs)
      if (p.coarse_ok) by_point.emplace_back(p.point, p.pixel);
    std::sort(by_point.begin(), by_point.end());
    std::vector<int> patches;
    std::size_t i = 0;
    while (i < by_point.size()) {
      const int point = by_point[i].first;
      const int node = graph.assignment[point];
      for (int l = 0; l < levels; ++l) {
        const auto& g = pyramid.levels[l];
        patches.clear();
        for (std::size_t j = i; j < by_point.size() && by_point[j].first == point; ++j) {
          const int pr = by_point[j].second / w, pc = by_point[j].second % w;
          patches.push_back(g.patch_index(g.patch_row_of_pixel(pr), g.patch_col_of_pixel(pc)));
        }
        std::sort(patches.begin(), patches.end());
        patches.erase(std::unique(patches.begin(), patches.end()), patches.end());
        for (int patch : patches)
          count_3d[l][static_cast<std::uint64_t>(patch) * node_count + node] += 1;
      }
      while (i < by_point.size() && by_point[i].first == point) ++i;
    }
  }

  // Per-patch valid pixel counts (denominator of the 2D side).
  std::vector<std::vector<int>> valid_px(levels);
  for (int l = 0; l < levels; ++l) valid_px[l].assign(pyramid.levels[l].patch_count(), 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!ctx.pixel_has_valid_depth(r, c)) continue;
      for (int l = 0; l < levels; ++l) {
        const auto& g = pyramid.levels[l];
        valid_px[l][g.patch_index(g.patch_row_of_pixel(r), g.patch_col_of_pixel(c))] += 1;
      }
    }
  }

  for (int l = 0; l < levels; ++l) {
    auto& out = table.coarse[l];
    for (const auto& [key, c2] : count_2d[l]) {
      const int patch = static_cast<int>(key / node_count);
      PatchLabel lab;
      lab.overlap_2d = valid_px[l][patch] > 0 ? static_cast<double>(c2) / valid_px[l][patch] : 0.0;
      out[key] = lab;
    }
    for (const auto& [key, c3] : count_3d[l]) {
      const int node = static_cast<int>(key % node_count);
      auto& lab = out[key];  // default-constructs overlap_2d = 0 when missing
      lab.overlap_3d = static_cast<double>(c3) / graph.members[node].size();
    }
    for (auto& [key, lab] : out) lab.label = label_patch_pair(lab.overlap_2d, lab.overlap_3d, th);
  }
  return table;
}

double scene_overlap_ratio(const DepthMap& depth, const CameraIntrinsics& k, const RigidTransform& camera_to_world,
                           const PointCloud& world_cloud, double dist3d) {
  // Image side unprojected into the world frame.
  std::vector<Vec3> img_points;
  img_points.reserve(depth.valid_count());
  for (int r = 0; r < depth.height; ++r) {
    for (int c = 0; c < depth.width; ++c) {
      if (!depth.valid(r, c)) continue;
      const Vec3 cam = unproject({static_cast<double>(c), static_cast<double>(r)}, depth.at(r, c), k);
      img_points.push_back(apply_transform(camera_to_world, cam));
    }
  }
  if (img_points.empty() || world_cloud.empty()) return 0.0;

  auto build_grid = [&](const std::vector<Vec3>& pts) {
    std::unordered_map<std::uint64_t, std::vector<int>> g;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      g[cell_key(cell_of(pts[i].x, dist3d), cell_of(pts[i].y, dist3d), cell_of(pts[i].z, dist3d))].push_back(
          static_cast<int>(i));
    }
    return g;
  };
  auto has_near = [&](const std::unordered_map<std::uint64_t, std::vector<int>>& g, const std::vector<Vec3>& pts,
                      const Vec3& q) {
    const std::int64_t gx = cell_of(q.x, dist3d), gy = cell_of(q.y, dist3d), gz = cell_of(q.z, dist3d);
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = g.find(cell_key(gx + dx, gy + dy, gz + dz));
          if (it == g.end()) continue;
          for (int i : it->second)
            if ((pts[i] - q).norm() < dist3d) return true;
        }
    return false;
  };

  const auto img_grid = build_grid(img_points);
  const auto cloud_grid = build_grid(world_cloud.points);

  std::size_t img_hit = 0;
  for (const Vec3& q : img_points)
    if (has_near(cloud_grid, world_cloud.points, q)) ++img_hit;
  std::size_t cloud_hit = 0;
  for (const Vec3& q : world_cloud.points)
    if (has_near(img_grid, img_points, q)) ++cloud_hit;

  const double r_img = static_cast<double>(img_hit) / img_points.size();
  const double r_cloud = static_cast<double>(cloud_hit) / world_cloud.size();
  return std::min(r_img, r_cloud);
}

std::vector<CandidatePair> filter_pairs(const std::vector<SceneView>& images,
                                        const std::vector<const PointCloud*>& clouds, double min_overlap,
                                        double dist3d) {
  std::vector<CandidatePair> kept;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t j = 0; j < clouds.size(); ++j) {
      const double ov = scene_overlap_ratio(*images[i].depth, images[i].intrinsics, images[i].camera_to_world,
                                            *clouds[j], dist3d);
      if (ov >= min_overlap) kept.push_back({static_cast<int>(i), static_cast<int>(j), ov});
    }
  }
  return kept;
}

}  // namespace xreg
