#include "xreg/metrics.hpp"

#include <cmath>

namespace xreg {

Ratio inlier_ratio(const std::vector<DenseCorrespondence>& corrs, const RigidTransform& gt_cloud_to_camera,
                   const CameraIntrinsics& k, const DepthMap& depth, double tau1) {
  Ratio out;
  if (corrs.empty()) return out;
  out.defined = true;
  std::size_t inliers = 0;
  for (const DenseCorrespondence& c : corrs) {
    const int px = static_cast<int>(std::lround(c.pixel.x));
    const int py = static_cast<int>(std::lround(c.pixel.y));
    if (!depth.valid(py, px)) continue;
    const Vec3 unprojected =
        unproject({static_cast<double>(px), static_cast<double>(py)}, depth.at(py, px), k);
    const Vec3 transformed = apply_transform(gt_cloud_to_camera, c.point);
    if ((transformed - unprojected).norm() < tau1) ++inliers;
  }
  out.value = static_cast<double>(inliers) / static_cast<double>(corrs.size());
  return out;
}

double feature_matching_recall(const std::vector<double>& inlier_ratios, double tau2) {
  if (inlier_ratios.empty()) throw EmptyInput("feature_matching_recall: no pairs");
  std::size_t hits = 0;
  for (double ir : inlier_ratios)
    if (ir > tau2) ++hits;
  return static_cast<double>(hits) / static_cast<double>(inlier_ratios.size());
}

double rmse(const PointCloud& cloud, const RigidTransform& estimated, const RigidTransform& ground_truth) {
  if (cloud.empty()) throw EmptyInput("rmse: empty cloud");
  double sum = 0.0;
  for (const Vec3& p : cloud.points)
    sum += (apply_transform(estimated, p) - apply_transform(ground_truth, p)).squared_norm();
  return std::sqrt(sum / static_cast<double>(cloud.size()));
}

double registration_recall(const std::vector<double>& rmses, double tau3) {
  if (rmses.empty()) throw EmptyInput("registration_recall: no pairs");
  std::size_t hits = 0;
  for (double r : rmses)
    if (r < tau3) ++hits;
  return static_cast<double>(hits) / static_cast<double>(rmses.size());
}

Ratio patch_inlier_ratio(const std::vector<PatchCorrespondence>& corrs, const OverlapContext& ctx,
                         const PatchPyramid& pyramid, const PointPatchGraph& graph, double pir_tau) {
  Ratio out;
  if (corrs.empty()) return out;
  out.defined = true;
  std::size_t hits = 0;
  for (const PatchCorrespondence& c : corrs) {
    const auto overlap =
        compute_patch_overlap(ctx, pyramid.levels[c.level], c.row, c.col, graph.members[c.node]);
    if (overlap.final_overlap > pir_tau) ++hits;
  }
  out.value = static_cast<double>(hits) / static_cast<double>(corrs.size());
  return out;
}

}  // namespace xreg
