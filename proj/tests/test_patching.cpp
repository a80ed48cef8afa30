#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "xreg/patching.hpp"
#include "xreg/rng.hpp"

using namespace xreg;

TEST_CASE("partition_image produces the paper-scale patch sizes") {
  const auto g1 = partition_image(480, 640, 60, 80);
  CHECK(g1.patch_h == 8);
  CHECK(g1.patch_w == 8);
  const auto g2 = partition_image(480, 640, 6, 8);
  CHECK(g2.patch_h == 80);
  CHECK(g2.patch_w == 80);
}

TEST_CASE("partition covers every pixel exactly once") {
  const auto g = partition_image(4, 4, 2, 2);
  CHECK(g.patch_count() == 4);
  std::set<std::pair<int, int>> seen;
  for (int pr = 0; pr < g.grid_h; ++pr) {
    for (int pc = 0; pc < g.grid_w; ++pc) {
      const auto range = g.patch_pixels(pr, pc);
      CHECK((range.r1 - range.r0) * (range.c1 - range.c0) == 4);
      for (int r = range.r0; r < range.r1; ++r)
        for (int c = range.c0; c < range.c1; ++c) CHECK(seen.insert({r, c}).second);
    }
  }
  CHECK(seen.size() == 16);
}

TEST_CASE("partition_image rejects non-divisible grids") {
  CHECK_THROWS_AS(partition_image(480, 640, 7, 8), PartitionError);
  CHECK_THROWS_AS(partition_image(480, 640, 6, 9), PartitionError);
}

TEST_CASE("build_pyramid yields the configured level grids") {
  const auto pyr = build_pyramid(480, 640, 6, 8, 3);
  REQUIRE(pyr.level_count() == 3);
  CHECK(pyr.levels[0].grid_h == 6);
  CHECK(pyr.levels[0].grid_w == 8);
  CHECK(pyr.levels[1].grid_h == 12);
  CHECK(pyr.levels[1].grid_w == 16);
  CHECK(pyr.levels[2].grid_h == 24);
  CHECK(pyr.levels[2].grid_w == 32);
}

TEST_CASE("K=1 pyramid reduces to partition_image") {
  const auto pyr = build_pyramid(120, 160, 3, 4, 1);
  REQUIRE(pyr.level_count() == 1);
  CHECK(pyr.levels[0].patch_h == 40);
  CHECK(pyr.levels[0].patch_w == 40);
}

TEST_CASE("each coarser patch is the disjoint union of its four children") {
  const auto pyr = build_pyramid(480, 640, 6, 8, 3);
  const auto& parent = pyr.levels[1];
  const auto& child = pyr.levels[2];
  for (int pr = 0; pr < parent.grid_h; ++pr) {
    for (int pc = 0; pc < parent.grid_w; ++pc) {
      const auto prange = parent.patch_pixels(pr, pc);
      std::size_t child_px = 0;
      for (int cr = 2 * pr; cr < 2 * pr + 2; ++cr) {
        for (int cc = 2 * pc; cc < 2 * pc + 2; ++cc) {
          const auto crange = child.patch_pixels(cr, cc);
          CHECK(crange.r0 >= prange.r0);
          CHECK(crange.r1 <= prange.r1);
          CHECK(crange.c0 >= prange.c0);
          CHECK(crange.c1 <= prange.c1);
          child_px += static_cast<std::size_t>(crange.r1 - crange.r0) * (crange.c1 - crange.c0);
        }
      }
      CHECK(child_px == static_cast<std::size_t>(prange.r1 - prange.r0) * (prange.c1 - prange.c0));
    }
  }
}

TEST_CASE("child patch centers lie inside their parent patch at every level") {
  const auto pyr = build_pyramid(120, 160, 3, 4, 3);
  for (int l = 1; l < pyr.level_count(); ++l) {
    const auto& fine = pyr.levels[l];
    const auto& coarse = pyr.levels[l - 1];
    for (int r = 0; r < fine.grid_h; ++r) {
      for (int c = 0; c < fine.grid_w; ++c) {
        const Vec2 center = fine.patch_center(r, c);
        const auto prange = coarse.patch_pixels(r / 2, c / 2);
        CHECK(center.y >= prange.r0 - 0.5);
        CHECK(center.y <= prange.r1 - 0.5);
        CHECK(center.x >= prange.c0 - 0.5);
        CHECK(center.x <= prange.c1 - 0.5);
      }
    }
  }
}

TEST_CASE("point_to_node with nodes == points is the identity assignment") {
  PointCloud pc;
  for (int i = 0; i < 20; ++i) pc.points.push_back({static_cast<double>(i), 0, 0});
  const auto graph = point_to_node(pc, pc);
  REQUIRE(graph.nodes.size() == 20);
  for (int i = 0; i < 20; ++i) {
    CHECK(graph.assignment[i] == i);
    REQUIRE(graph.members[i].size() == 1);
    CHECK(graph.members[i][0] == i);
  }
}

TEST_CASE("point_to_node with a single node assigns everything to it") {
  PointCloud pc;
  Rng rng(3);
  for (int i = 0; i < 50; ++i) pc.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  PointCloud node;
  node.points.push_back({0, 0, 0});
  const auto graph = point_to_node(pc, node);
  CHECK(graph.members[0].size() == 50);
  for (int a : graph.assignment) CHECK(a == 0);
}

TEST_CASE("point_to_node matches the brute-force nearest-neighbor oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud pts, nodes;
    const int n = 100 + rng.below_int(200);
    const int m = 5 + rng.below_int(30);
    for (int i = 0; i < n; ++i) pts.points.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
    for (int j = 0; j < m; ++j) nodes.points.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});

    const auto graph = point_to_node(pts, nodes);

    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = squared_distance(pts.points[i], nodes.points[0]);
      for (int j = 1; j < m; ++j) {
        const double d = squared_distance(pts.points[i], nodes.points[j]);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      // Assignment indexes the compacted node list; compare positions.
      CHECK((graph.nodes.points[graph.assignment[i]] - nodes.points[best]).norm() == 0.0);
    }

    // Assignment distance is minimal among surviving nodes.
    for (int i = 0; i < n; ++i) {
      const double assigned = squared_distance(pts.points[i], graph.nodes.points[graph.assignment[i]]);
      for (std::size_t j = 0; j < graph.nodes.size(); ++j)
        CHECK(assigned <= squared_distance(pts.points[i], graph.nodes.points[j]) + 1e-18);
    }

    // Members partition the input.
    std::size_t total = 0;
    for (const auto& mlist : graph.members) total += mlist.size();
    CHECK(total == static_cast<std::size_t>(n));
  }
}

TEST_CASE("point_to_node breaks exact ties toward the lower node index") {
  PointCloud pts;
  pts.points.push_back({0.5, 0, 0});
  PointCloud nodes;
  nodes.points.push_back({0, 0, 0});
  nodes.points.push_back({1, 0, 0});
  const auto graph = point_to_node(pts, nodes);
  CHECK(graph.nodes.points[graph.assignment[0]].x == 0.0);
}
