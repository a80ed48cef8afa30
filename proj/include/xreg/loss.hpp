#pragma once

#include <vector>

#include "xreg/tensor.hpp"

namespace xreg {

struct CircleLossConfig {
  double gamma = 24.0;
  double delta_p = 0.1;
  double delta_n = 1.4;
  double lambda_fine = 1.0;

  void validate() const {
    if (!(gamma > 0.0)) throw Error("circle loss: gamma must be positive");
    if (!(delta_p < delta_n)) throw Error("circle loss: delta_p must be below delta_n");
  }
};

struct CircleLossResult {
  double value = 0.0;
  std::vector<double> grad_pos;  // d value / d pos distance
  std::vector<double> grad_neg;  // d value / d neg distance
};

// Weighted circle loss over one anchor's positive/negative distances. The
// per-pair weights gamma*scale*(d - delta_p) resp. gamma*scale*(delta_n - d)
// are clamped at zero and treated as constants in the gradient. Empty
// positive or negative sets give loss 0 with zero gradients.
CircleLossResult circle_loss(const std::vector<double>& pos_dist, const std::vector<double>& neg_dist,
                             const std::vector<double>& pos_scale, const std::vector<double>& neg_scale,
                             const CircleLossConfig& cfg);

// Anchor spec over one row of a distance matrix.
struct CircleAnchor {
  std::vector<int> positives;
  std::vector<double> positive_scales;  // lambda_p per positive
  std::vector<int> negatives;           // lambda_n fixed at 1
};

// Sum of per-row circle losses on a (rows x cols) distance-matrix node.
// Rows with no positives are skipped; contributing reports how many rows
// entered the sum. Returns a scalar node.
int circle_loss_over_rows(Graph& g, int dist_matrix, const std::vector<CircleAnchor>& row_anchors,
                          const CircleLossConfig& cfg, int* contributing);

// total = coarse + lambda_fine * fine
int total_loss(Graph& g, int coarse, int fine, const CircleLossConfig& cfg);

}  // namespace xreg
