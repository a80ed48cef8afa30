#pragma once

#include <vector>

#include "xreg/geometry.hpp"

namespace xreg {

// Uniform partition of an H×W image into grid_h × grid_w rectangular patches,
// row-major patch order. Patch (i, j) owns the pixel block
// [i*patch_h, (i+1)*patch_h) × [j*patch_w, (j+1)*patch_w).
struct ImagePatchGrid {
  int image_h = 0, image_w = 0;
  int grid_h = 0, grid_w = 0;
  int patch_h = 0, patch_w = 0;

  int patch_count() const { return grid_h * grid_w; }
  int patch_index(int row, int col) const { return row * grid_w + col; }
  int patch_row_of_pixel(int pixel_r) const { return pixel_r / patch_h; }
  int patch_col_of_pixel(int pixel_c) const { return pixel_c / patch_w; }

  // Continuous center of the pixel block (integer coordinates = pixel centers).
  Vec2 patch_center(int row, int col) const {
    return {col * patch_w + (patch_w - 1) * 0.5, row * patch_h + (patch_h - 1) * 0.5};
  }

  struct PixelRange {
    int r0, r1, c0, c1;  // half-open
  };
  PixelRange patch_pixels(int row, int col) const {
    return {row * patch_h, (row + 1) * patch_h, col * patch_w, (col + 1) * patch_w};
  }
};

ImagePatchGrid partition_image(int image_h, int image_w, int grid_h, int grid_w);

// Levels ordered coarsest to finest; each level doubles the patch counts of
// the previous one, so every finer patch nests inside exactly one coarser
// patch.
struct PatchPyramid {
  std::vector<ImagePatchGrid> levels;

  int level_count() const { return static_cast<int>(levels.size()); }
  const ImagePatchGrid& finest() const { return levels.back(); }
  const ImagePatchGrid& coarsest() const { return levels.front(); }
  int total_patches() const {
    int n = 0;
    for (const auto& l : levels) n += l.patch_count();
    return n;
  }
};

PatchPyramid build_pyramid(int image_h, int image_w, int base_grid_h, int base_grid_w, int level_count);

// Point-to-node partition: every point is assigned to its nearest node
// (ties broken by lowest node index). Nodes that end up with no members are
// dropped and the remaining nodes reindexed.
struct PointPatchGraph {
  PointCloud nodes;
  std::vector<int> assignment;            // per point, index into nodes
  std::vector<std::vector<int>> members;  // per node, point indices
};

PointPatchGraph point_to_node(const PointCloud& points, const PointCloud& nodes);

}  // namespace xreg
