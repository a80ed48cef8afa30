#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "xreg/geometry.hpp"
#include "xreg/patching.hpp"
#include "xreg/rng.hpp"

namespace xreg {

struct OverlapThresholds {
  double dist3d = 0.0375;   // meters, strict <
  double dist2d = 8.0;      // pixels, strict <
  double patch_pos = 0.30;  // both ratios >= patch_pos -> Positive
  double patch_neg = 0.20;  // both ratios <  patch_neg -> Negative
  double fine_pos3d = 0.0375;
  double fine_pos2d = 8.0;
  double fine_neg3d = 0.10;
  double fine_neg2d = 12.0;

  void validate() const {
    if (!(patch_neg > 0.0 && patch_neg < patch_pos && patch_pos <= 1.0))
      throw Error("overlap thresholds: need 0 < patch_neg < patch_pos <= 1");
    if (!(fine_pos3d < fine_neg3d) || !(fine_pos2d < fine_neg2d))
      throw Error("overlap thresholds: fine positive bands must sit below negative bands");
  }
};

enum class PairLabel : std::uint8_t { Positive, Negative, Ignore };

struct PatchLabel {
  PairLabel label = PairLabel::Negative;
  double overlap_2d = 0.0;
  double overlap_3d = 0.0;
  double final_overlap() const { return overlap_2d < overlap_3d ? overlap_2d : overlap_3d; }
};

PairLabel label_patch_pair(double overlap_2d, double overlap_3d, const OverlapThresholds& th);

// From measured distances: Positive iff d3 < fine_pos3d and d2 < fine_pos2d;
// Negative iff d3 > fine_neg3d or d2 > fine_neg2d; Ignore otherwise.
PairLabel label_pixel_point(double dist3d, double dist2d, const OverlapThresholds& th);

// Precomputed per-pair geometry shared by all overlap queries: camera-frame
// unprojections of valid pixels, transformed/projected cloud points, and a
// spatial hash over the transformed points at cell size dist3d (exact: a
// 27-cell neighborhood covers every strict-< match).
class OverlapContext {
 public:
  OverlapContext(const DepthMap& depth, const CameraIntrinsics& k, const RigidTransform& cloud_to_camera,
                 const PointCloud& cloud, const OverlapThresholds& th);

  // Strict-< bilateral test between one cloud point and one pixel.
  bool point_overlapped(int point_idx, int pixel_r, int pixel_c) const;

  // Point indices within dist3d of the pixel's camera-frame unprojection
  // (3D test only; callers apply the 2D test).
  void candidates_near_pixel(int pixel_r, int pixel_c, std::vector<int>& out) const;

  bool pixel_has_valid_depth(int r, int c) const { return depth_->valid(r, c); }
  const Vec3& pixel_camera_point(int r, int c) const { return pixel_points_[static_cast<std::size_t>(r) * width() + c]; }
  int width() const { return depth_->width; }
  int height() const { return depth_->height; }
  std::size_t point_count() const { return cam_points_.size(); }
  const Vec3& camera_point(int i) const { return cam_points_[i]; }
  bool projection_valid(int i) const { return proj_valid_[i] != 0; }
  const Vec2& projected_pixel(int i) const { return proj_[i]; }
  const OverlapThresholds& thresholds() const { return th_; }
  const CameraIntrinsics& intrinsics() const { return k_; }
  const DepthMap& depth() const { return *depth_; }

 private:
  const DepthMap* depth_;
  CameraIntrinsics k_;
  OverlapThresholds th_;
  std::vector<Vec3> pixel_points_;
  std::vector<std::uint8_t> pixel_valid_;
  std::vector<Vec3> cam_points_;
  std::vector<Vec2> proj_;
  std::vector<std::uint8_t> proj_valid_;
  std::unordered_map<std::uint64_t, std::vector<int>> grid_;
  double cell_ = 0.0;
};

struct PatchOverlap {
  double overlap_2d = 0.0;
  double overlap_3d = 0.0;
  double final_overlap = 0.0;
};

// Bilateral overlap between one image patch and one point patch:
// overlap_2d = fraction of the patch's valid-depth pixels with an overlapping
// member point, overlap_3d = fraction of members with an overlapping patch
// pixel, final = min of the two.
PatchOverlap compute_patch_overlap(const OverlapContext& ctx, const ImagePatchGrid& grid, int patch_row,
                                   int patch_col, const std::vector<int>& member_points);

// All coarse labels of one (image, cloud) pair plus the pixel-point pairs
// that satisfy the fine positive criterion. Key = patch_index * node_count +
// node_index; absent keys mean zero overlap on both sides (Negative).
struct PairLabelTable {
  struct FinePair {
    int pixel_r, pixel_c;
    int point;
  };
  std::vector<std::unordered_map<std::uint64_t, PatchLabel>> coarse;  // per pyramid level
  std::vector<FinePair> fine_positives;
  int node_count = 0;

  const PatchLabel* find(int level, int patch_idx, int node_idx) const {
    const auto& m = coarse[level];
    auto it = m.find(static_cast<std::uint64_t>(patch_idx) * node_count + node_idx);
    return it == m.end() ? nullptr : &it->second;
  }
};

PairLabelTable compute_pair_labels(const OverlapContext& ctx, const PatchPyramid& pyramid,
                                   const PointPatchGraph& graph);

// Scene-level overlap for pair filtering: 3D-only criterion, bilateral,
// min-reduced. The image side unprojects valid pixels into the world frame.
double scene_overlap_ratio(const DepthMap& depth, const CameraIntrinsics& k, const RigidTransform& camera_to_world,
                           const PointCloud& world_cloud, double dist3d);

struct CandidatePair {
  int image_idx;
  int cloud_idx;
  double overlap;
};

struct SceneView {
  const DepthMap* depth;
  CameraIntrinsics intrinsics;
  RigidTransform camera_to_world;
};

// Retains all (image, cloud) pairs whose scene-level overlap is >= min_overlap.
std::vector<CandidatePair> filter_pairs(const std::vector<SceneView>& images,
                                        const std::vector<const PointCloud*>& clouds, double min_overlap,
                                        double dist3d = 0.0375);

}  // namespace xreg
