#pragma once

#include <cstdint>
#include <vector>

#include "xreg/geometry.hpp"

namespace xreg {

struct Correspondence2D3D {
  Vec3 point;  // cloud frame
  Vec2 pixel;
};

struct RansacConfig {
  int iterations = 5000;
  double inlier_tol = 8.0;  // pixels, unsquared L2
  int sample_size = 4;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (iterations < 1) throw Error("ransac: iterations must be >= 1");
    if (!(inlier_tol > 0.0)) throw Error("ransac: inlier tolerance must be positive");
    if (sample_size < 4) throw Error("ransac: sample size must be >= 4");
  }
};

struct RegistrationResult {
  RigidTransform transform;  // cloud -> camera
  std::vector<std::uint8_t> inlier_mask;
  double mean_inlier_error = 0.0;
  int inlier_count = 0;
};

// Unsquared pixel reprojection error; +inf when the transformed point falls
// behind the camera (never an inlier).
double reprojection_error(const Correspondence2D3D& corr, const RigidTransform& t, const CameraIntrinsics& k);

// Closed-form EPnP. Throws TooFewPoints below 4 correspondences and
// DegenerateConfiguration for (near-)coplanar control-point geometry.
RigidTransform epnp(const std::vector<Correspondence2D3D>& corrs, const CameraIntrinsics& k);

// Fixed-iteration RANSAC around EPnP, scored by inlier count (ties by lower
// mean inlier error, then earlier iteration), refit on the full inlier set.
// Deterministic given cfg.seed; hypothesis evaluation is schedule-independent
// so cfg.threads does not change the result.
RegistrationResult pnp_ransac(const std::vector<Correspondence2D3D>& corrs, const CameraIntrinsics& k,
                              const RansacConfig& cfg);

// Geodesic distance between rotations, radians (test/metric helper).
double rotation_geodesic_error(const RigidTransform& a, const RigidTransform& b);

}  // namespace xreg
