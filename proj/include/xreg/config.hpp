#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xreg/geometry.hpp"
#include "xreg/groundtruth.hpp"
#include "xreg/loss.hpp"
#include "xreg/matching.hpp"
#include "xreg/metrics.hpp"
#include "xreg/neural.hpp"
#include "xreg/registration.hpp"

namespace xreg {

struct SynthConfig {
  int frames = 60;
  int fusion_window = 5;
  // Orbit sector shared by both regimes; a narrow default keeps consecutive
  // windows well overlapped. Raise toward 2*pi for wide-baseline datasets.
  double azimuth_span = 1.2;
  double near_radius_min = 1.25, near_radius_max = 1.45;
  double far_radius_min = 2.5, far_radius_max = 2.9;
  double near_fraction = 0.5;
  int boxes = 5;
  int spheres = 4;
  int noise_octaves = 4;
  double min_overlap = 0.30;
  double target_mean_depth_near = 1.15;
  double target_mean_depth_far = 2.60;
  double holdout_fraction = 0.30;
};

struct PatchingConfig {
  int coarse_grid_h = 15, coarse_grid_w = 20;
  int pyramid_base_h = 3, pyramid_base_w = 4;
  int pyramid_levels = 3;
  int transformer_grid_h = 12, transformer_grid_w = 16;
  double voxel_fine = 0.025;
  double voxel_node = 0.20;
  // Nodes with fewer members are dropped from matching (1 = only empty).
  int min_node_members = 1;
};

struct NeuralConfig {
  std::size_t width = 64;
  int heads = 4;
  int rounds = 3;
  std::size_t fine_width = 32;
  int fourier_len_2d = 10;
  int fourier_len_3d = 6;
  int stem_channels = 8;
  int texture_channels = 16;
  std::vector<int> stage_channels = {12, 16, 24};
  std::size_t point_hidden = 48;
};

struct TrainConfig {
  int epochs = 20;
  double lr = 1e-4;
  double decay = 0.05;  // per-epoch multiplicative decay factor is (1 - decay)
  int fine_samples = 256;
  std::string optimizer = "adam";
};

// Ground-truth feature construction. Coarse: random-Fourier region
// signatures (patch pixels vs node members), whose cosine estimates the
// RBF-kernel overlap of the two regions, so mutual top-k picks the
// overlap-optimal pyramid level and min_score acts as an overlap floor.
// Fine: normalized homogeneous coordinates [p, C], distance-faithful for
// C well above the scene radius.
struct OracleConfig {
  int coarse_dim = 1024;
  double coarse_sigma = 0.0125;  // meters
  double fine_homogeneous = 128.0;
  // Kernel cosine tracks sqrt(r_2d * r_3d); a floor of 0.58 keeps
  // min(r_2d, r_3d) above the PIR threshold (0.3) with margin.
  double min_score = 0.58;
  // Mutual top-k widths used by oracle evaluations.
  int coarse_k = 1;
  int fine_k = 4;
  // Penalizes size-mismatched patch/node pairings (log2 voxel-count channel).
  double size_weight = 0.0;
  // Node-member floor applied by oracle evaluations.
  int min_node_members = 32;
  // Fine matches farther than this (meters) are gated out; 0 disables.
  double fine_gate = 0.015;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  int threads = 1;
  CameraIntrinsics camera{125.0, 125.0, 79.5, 59.5, 160, 120};
  SynthConfig synth;
  PatchingConfig patching;
  NeuralConfig neural;
  MatchingConfig matching;
  CircleLossConfig loss;
  OverlapThresholds thresholds;
  RansacConfig ransac;
  MetricThresholds metrics;
  TrainConfig train;
  OracleConfig oracle;

  void validate() const;

  ToyExtractorConfig toy_config() const;
  RefineConfig refine_config() const;
  PatchPyramid make_pyramid() const;
};

// Whole-config JSON round trip. Unknown keys are rejected.
std::string config_to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const std::string& text);
PipelineConfig load_config_file(const std::string& path);

// Applies one "dotted.path=value" override (e.g. "ransac.iterations=100").
void apply_override(PipelineConfig& cfg, const std::string& assignment);

}  // namespace xreg
