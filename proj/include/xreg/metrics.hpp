#pragma once

#include <vector>

#include "xreg/groundtruth.hpp"
#include "xreg/matching.hpp"

namespace xreg {

struct MetricThresholds {
  double tau1 = 0.05;    // inlier ratio, meters, strict <
  double tau2 = 0.10;    // feature matching recall over IR, strict >
  double tau3 = 0.10;    // registration recall over RMSE, meters, strict <
  double pir_tau = 0.30;  // patch inlier ratio over final overlap, strict >
};

struct Ratio {
  double value = 0.0;
  bool defined = false;  // false when the input set was empty
};

// Fraction of correspondences whose transformed point lies within tau1 of the
// pixel's unprojection. Pixels are looked up at the nearest integer position;
// invalid depth counts as a non-inlier.
Ratio inlier_ratio(const std::vector<DenseCorrespondence>& corrs, const RigidTransform& gt_cloud_to_camera,
                   const CameraIntrinsics& k, const DepthMap& depth, double tau1);

// Fraction of pairs with IR strictly above tau2.
double feature_matching_recall(const std::vector<double>& inlier_ratios, double tau2);

// sqrt(mean ||T(p) - T*(p)||^2) over the cloud.
double rmse(const PointCloud& cloud, const RigidTransform& estimated, const RigidTransform& ground_truth);

// Fraction of pairs with RMSE strictly below tau3 (failed registrations enter
// as +inf).
double registration_recall(const std::vector<double>& rmses, double tau3);

// Fraction of patch correspondences whose bilateral final overlap under the
// ground-truth transform is strictly above pir_tau.
Ratio patch_inlier_ratio(const std::vector<PatchCorrespondence>& corrs, const OverlapContext& ctx,
                         const PatchPyramid& pyramid, const PointPatchGraph& graph, double pir_tau);

}  // namespace xreg
