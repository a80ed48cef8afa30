#include "xreg/patching.hpp"

#include <limits>

namespace xreg {

ImagePatchGrid partition_image(int image_h, int image_w, int grid_h, int grid_w) {
  if (grid_h <= 0 || grid_w <= 0 || image_h <= 0 || image_w <= 0)
    throw PartitionError("partition_image: sizes must be positive");
  if (image_h % grid_h != 0 || image_w % grid_w != 0)
    throw PartitionError("partition_image: grid does not divide image size");
  ImagePatchGrid g;
  g.image_h = image_h;
  g.image_w = image_w;
  g.grid_h = grid_h;
  g.grid_w = grid_w;
  g.patch_h = image_h / grid_h;
  g.patch_w = image_w / grid_w;
  return g;
}

PatchPyramid build_pyramid(int image_h, int image_w, int base_grid_h, int base_grid_w, int level_count) {
  if (level_count < 1) throw PartitionError("build_pyramid: need at least one level");
  PatchPyramid pyr;
  int gh = base_grid_h, gw = base_grid_w;
  for (int level = 0; level < level_count; ++level) {
    pyr.levels.push_back(partition_image(image_h, image_w, gh, gw));
    gh *= 2;
    gw *= 2;
  }
  return pyr;
}

PointPatchGraph point_to_node(const PointCloud& points, const PointCloud& nodes) {
  if (nodes.empty()) throw EmptyInput("point_to_node: no nodes");

  PointPatchGraph graph;
  graph.assignment.resize(points.size());
  std::vector<std::vector<int>> members(nodes.size());

  for (std::size_t i = 0; i < points.size(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const double d = squared_distance(points.points[i], nodes.points[j]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    graph.assignment[i] = best;
    members[best].push_back(static_cast<int>(i));
  }

  // Drop empty nodes, reindex.
  std::vector<int> remap(nodes.size(), -1);
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    if (members[j].empty()) continue;
    remap[j] = static_cast<int>(graph.nodes.size());
    graph.nodes.points.push_back(nodes.points[j]);
    graph.members.push_back(std::move(members[j]));
  }
  for (int& a : graph.assignment) a = remap[a];
  return graph;
}

}  // namespace xreg
