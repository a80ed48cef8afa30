#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xreg/geometry.hpp"
#include "xreg/matching.hpp"
#include "xreg/neural.hpp"

namespace xreg {

// Binary containers share a 16-byte magic field: 8 ASCII bytes, zero padded.
// Point cloud "XREGPC01": u64 count, then N x 3 f32 (little endian).
// Depth map   "XREGDP01": u32 height, u32 width, then H*W f32 meters (NaN = invalid).
// Image raster "XREGIM01": same layout as the depth container.
// Checkpoint  "XREGCK01": u64 json length, json header, then f32 payloads
//             concatenated in the header's name order.

void save_point_cloud(const std::string& path, const PointCloud& pc);
PointCloud load_point_cloud(const std::string& path);

void save_depth_map(const std::string& path, const DepthMap& d);
DepthMap load_depth_map(const std::string& path);

// Scalar appearance raster, H x W.
void save_image(const std::string& path, const Tensor& image);
Tensor load_image(const std::string& path);

void save_intrinsics_json(const std::string& path, const CameraIntrinsics& k);
CameraIntrinsics load_intrinsics_json(const std::string& path);

// 4x4 row-major matrix document.
void save_transform_json(const std::string& path, const RigidTransform& t);
RigidTransform load_transform_json(const std::string& path);
std::string transform_to_json(const RigidTransform& t);

// JSON-lines correspondences: {"u","v","x","y","z","score"} per line.
void save_correspondences_jsonl(const std::string& path, const std::vector<DenseCorrespondence>& corrs);
std::vector<DenseCorrespondence> load_correspondences_jsonl(const std::string& path);

struct CheckpointHeader {
  std::uint64_t seed = 0;
  std::string config_json;  // embedded full config (may be empty)
};

void save_checkpoint(const std::string& path, const ParamStore& store, const CheckpointHeader& header);
CheckpointHeader load_checkpoint(const std::string& path, ParamStore& store);

// Feature dump: a checkpoint container holding exactly
// {"f2d_coarse","f2d_fine","f3d_coarse","f3d_fine"}.
struct FeatureDump {
  Tensor f2d_coarse;  // (C, gh, gw)
  Tensor f2d_fine;    // (H*W, fine_width)
  Tensor f3d_coarse;  // (M, C)
  Tensor f3d_fine;    // (N, fine_width)
};

void save_feature_dump(const std::string& path, const FeatureDump& dump);
FeatureDump load_feature_dump(const std::string& path);

}  // namespace xreg
