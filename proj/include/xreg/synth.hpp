#pragma once

#include <string>
#include <vector>

#include "xreg/config.hpp"
#include "xreg/geometry.hpp"
#include "xreg/tensor.hpp"

namespace xreg {

struct SceneSample {
  Tensor image;  // H x W scalar appearance
  DepthMap depth;
  RigidTransform camera_to_world;
  int frame_id = 0;
  bool near_regime = true;
};

// Ray-casts a procedural table scene (floor plane, boxes, spheres with
// value-noise appearance) along a near/far orbit trajectory. Deterministic
// per cfg.seed.
std::vector<SceneSample> generate_scene(const PipelineConfig& cfg);

struct Dataset {
  PipelineConfig config;
  std::vector<SceneSample> frames;
  std::vector<PointCloud> clouds;  // fused per window, world frame
  std::vector<int> image_frames;   // frame index backing each image

  struct Pair {
    int image;  // index into image_frames
    int cloud;
    double overlap;
    bool train;
  };
  std::vector<Pair> pairs;

  const SceneSample& image_frame(int pair_idx) const { return frames[image_frames[pairs[pair_idx].image]]; }
  const PointCloud& pair_cloud(int pair_idx) const { return clouds[pairs[pair_idx].cloud]; }
  // Ground-truth cloud->camera transform of a pair.
  RigidTransform gt_transform(int pair_idx) const { return invert(image_frame(pair_idx).camera_to_world); }
  std::vector<int> train_pairs() const;
  std::vector<int> test_pairs() const;
};

// Fuses per-window clouds, filters (image, cloud) pairs by scene overlap and
// assigns a deterministic train/test split.
Dataset build_pairs(const PipelineConfig& cfg, std::vector<SceneSample> frames);

void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

double mean_valid_depth(const DepthMap& d);

}  // namespace xreg
