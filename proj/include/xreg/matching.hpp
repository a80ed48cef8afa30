#pragma once

#include <cstdint>
#include <vector>

#include "xreg/geometry.hpp"
#include "xreg/patching.hpp"
#include "xreg/tensor.hpp"

namespace xreg {

struct MatchPair {
  int i, j;
  double dist;
};

// Mutual top-k selection under L2 distance on unit rows: (i, j) is kept iff
// j is among the k nearest rows of B to A_i AND i is among the k nearest
// rows of A to B_j. Ties break toward the lower index; output sorted by
// ascending distance (then indices).
std::vector<MatchPair> mutual_topk(const Tensor& a, const Tensor& b, int k);

struct PatchCorrespondence {
  int level;
  int row, col;
  int node;
  double score;  // cosine similarity of unit features
};

struct MatchingConfig {
  int coarse_k = 3;
  int fine_k = 2;
  int max_coarse = 256;         // keep the top entries by score when exceeded
  double min_score = -1.0;      // drop coarse entries below this cosine
  double fine_min_score = -1.0; // drop dense matches below this cosine
};

// Flattens every pyramid level's patch features into one candidate pool and
// runs mutual top-k against the node features; the level of each winning
// entry is the inferred scale. level_valid, when given, masks patches out of
// the pool (one flag vector per level).
std::vector<PatchCorrespondence> coarse_match(const std::vector<Tensor>& level_features,
                                              const Tensor& node_features, const PatchPyramid& pyramid,
                                              const MatchingConfig& cfg,
                                              const std::vector<std::vector<std::uint8_t>>* level_valid = nullptr);

struct DenseCorrespondence {
  Vec2 pixel;
  Vec3 point;
  double score;
  // Provenance: the patch correspondence this match came from.
  int src_level = -1;
  int src_row = -1, src_col = -1;
  int src_node = -1;
};

// Refines one patch correspondence into local dense matches: samples the
// patch's pixels on a stride-2 lattice (exactly 1/4 of the pixels), then
// mutual top-k between sampled pixel features and the node's member point
// features. pixel_valid, when given, masks sampled pixels (row-major H*W).
std::vector<DenseCorrespondence> fine_match(const PatchCorrespondence& corr, const PatchPyramid& pyramid,
                                            const Tensor& image_fine_rows, const Tensor& point_fine_rows,
                                            const PointPatchGraph& graph, const PointCloud& cloud, int fine_k,
                                            const std::vector<std::uint8_t>* pixel_valid = nullptr,
                                            double fine_min_score = -1.0);

// Concatenates local matches, removes exact duplicate (pixel, point) pairs
// keeping the highest score, and orders by score descending (ties by
// coordinates ascending).
std::vector<DenseCorrespondence> assemble(std::vector<DenseCorrespondence> matches);

}  // namespace xreg
