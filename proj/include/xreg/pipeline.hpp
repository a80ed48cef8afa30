#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "xreg/config.hpp"
#include "xreg/io.hpp"
#include "xreg/synth.hpp"

namespace xreg {

// Per-pair derived geometry: node graph from grid subsampling plus the image
// patch pyramid.
struct PairGeometry {
  PatchPyramid pyramid;
  PointPatchGraph graph;
};

PairGeometry make_pair_geometry(const PipelineConfig& cfg, const PointCloud& cloud);

// Final matching features of one pair: unit rows everywhere.
struct PairFeatures {
  std::vector<Tensor> level_features;
  std::vector<std::vector<std::uint8_t>> level_valid;  // empty vectors = all valid
  Tensor node_features;
  Tensor image_fine;
  Tensor point_fine;
  std::vector<std::uint8_t> pixel_valid;  // empty = all pixels usable
};

void ensure_pipeline_params(ParamStore& store, const PipelineConfig& cfg);

struct HeadIds {
  std::vector<int> level_tokens;  // normalized, coarsest first
  int node_tokens;                // normalized
  int image_fine;                 // unnormalized rows (background rows may be zero)
  int point_fine;                 // unnormalized rows
};

// Backbone + positional augmentation + attention refinement + pyramid stack +
// normalization, on the tape (shared by training and inference).
HeadIds pipeline_forward(Graph& g, GraphParams& params, const PipelineConfig& cfg, const Tensor& image,
                         const PointCloud& cloud, const PointPatchGraph& graph);

// Same head on top of precomputed backbone features (FileProvider path).
HeadIds pipeline_forward_from_dump(Graph& g, GraphParams& params, const PipelineConfig& cfg,
                                   const FeatureDump& dump, const PointPatchGraph& graph);

// depth, when given, masks invalid pixels out of the fine sampling.
PairFeatures extract_features_toy(ParamStore& store, const PipelineConfig& cfg, const Tensor& image,
                                  const PointCloud& cloud, const PointPatchGraph& graph,
                                  const DepthMap* depth = nullptr);
PairFeatures extract_features_dump(ParamStore& store, const PipelineConfig& cfg, const FeatureDump& dump,
                                   const PointPatchGraph& graph, const DepthMap* depth = nullptr);

// Ground-truth-keyed features: kernel embeddings of world-frame geometry on
// both sides (region signatures at the coarse level, per-point embeddings at
// the fine level). Exercises matching, registration and metrics without any
// training.
PairFeatures extract_features_oracle(const PipelineConfig& cfg, const DepthMap& depth,
                                     const RigidTransform& camera_to_world, const PointCloud& cloud,
                                     const PairGeometry& geom);

// Oracle evaluations apply the oracle's coarse score floor and translate the
// fine distance gate into a cosine floor on the homogeneous features.
inline PipelineConfig oracle_eval_config(PipelineConfig cfg) {
  cfg.matching.min_score = cfg.oracle.min_score;
  cfg.matching.coarse_k = cfg.oracle.coarse_k;
  cfg.matching.fine_k = cfg.oracle.fine_k;
  cfg.patching.min_node_members = std::max(cfg.patching.min_node_members, cfg.oracle.min_node_members);
  if (cfg.oracle.fine_gate > 0.0) {
    const double ratio = cfg.oracle.fine_gate / cfg.oracle.fine_homogeneous;
    cfg.matching.fine_min_score = 1.0 - 0.5 * ratio * ratio;
  }
  return cfg;
}

struct PairMatches {
  std::vector<PatchCorrespondence> coarse;
  std::vector<DenseCorrespondence> dense;
};

PairMatches match_pair(const PipelineConfig& cfg, const PairFeatures& features, const PairGeometry& geom,
                       const PointCloud& cloud);

struct PairEvaluation {
  double inlier_ratio = 0.0;
  double rmse = 0.0;  // +inf when registration failed
  double pir = 0.0;
  bool registered = false;
  int dense_count = 0;
  int coarse_count = 0;
};

PairEvaluation evaluate_pair(const PipelineConfig& cfg, const Dataset& ds, int pair_idx,
                             const PairFeatures& features, const PairGeometry& geom);

struct EvalReport {
  std::vector<PairEvaluation> per_pair;
  std::vector<int> pair_indices;
  double ir_mean = 0.0;
  double fmr = 0.0;
  double rr = 0.0;
  double pir_mean = 0.0;
};

using FeatureFn = std::function<PairFeatures(int pair_idx, const PairGeometry& geom)>;

EvalReport evaluate_dataset(const PipelineConfig& cfg, const Dataset& ds, const std::vector<int>& pair_indices,
                            const FeatureFn& features);

void write_report_json(const std::string& path, const EvalReport& report);
void write_report_csv(const std::string& path, const EvalReport& report);
// Threshold sweep curves for external plotting: metric,threshold,value rows.
void write_report_curves(const std::string& path, const PipelineConfig& cfg, const Dataset& ds,
                         const EvalReport& report, const std::vector<std::vector<DenseCorrespondence>>& dense,
                         const std::vector<RigidTransform>& poses, const std::vector<std::uint8_t>& registered);

// Full evaluation that also returns raw matches/poses (for curves and CLI).
struct DatasetEvaluation {
  EvalReport report;
  std::vector<std::vector<DenseCorrespondence>> dense;
  std::vector<RigidTransform> poses;
  std::vector<std::uint8_t> registered;
};

DatasetEvaluation evaluate_dataset_full(const PipelineConfig& cfg, const Dataset& ds,
                                        const std::vector<int>& pair_indices, const FeatureFn& features);

}  // namespace xreg
