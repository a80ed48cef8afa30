#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "xreg/matching.hpp"
#include "xreg/rng.hpp"

using namespace xreg;

namespace {

Tensor unit_rows(Rng& rng, std::size_t n, std::size_t d) {
  Tensor t({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      t.at(r, c) = rng.gaussian();
      sq += t.at(r, c) * t.at(r, c);
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t c = 0; c < d; ++c) t.at(r, c) *= inv;
  }
  return t;
}

// Exhaustive mutual top-k oracle.
std::set<std::pair<int, int>> brute_mutual_topk(const Tensor& a, const Tensor& b, int k) {
  const std::size_t na = a.rows(), nb = b.rows(), d = a.cols();
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double v = a.at(i, c) - b.at(j, c);
      s += v * v;
    }
    return s;
  };
  auto topk_fwd = [&](std::size_t i) {
    std::vector<int> idx(nb);
    for (std::size_t j = 0; j < nb; ++j) idx[j] = static_cast<int>(j);
    std::sort(idx.begin(), idx.end(), [&](int x, int y) {
      const double dx = dist(i, x), dy = dist(i, y);
      if (dx != dy) return dx < dy;
      return x < y;
    });
    idx.resize(std::min<std::size_t>(k, nb));
    return idx;
  };
  auto topk_bwd = [&](std::size_t j) {
    std::vector<int> idx(na);
    for (std::size_t i = 0; i < na; ++i) idx[i] = static_cast<int>(i);
    std::sort(idx.begin(), idx.end(), [&](int x, int y) {
      const double dx = dist(x, j), dy = dist(y, j);
      if (dx != dy) return dx < dy;
      return x < y;
    });
    idx.resize(std::min<std::size_t>(k, na));
    return idx;
  };
  std::set<std::pair<int, int>> out;
  for (std::size_t i = 0; i < na; ++i) {
    const auto fwd = topk_fwd(i);
    for (int j : fwd) {
      const auto bwd = topk_bwd(j);
      if (std::find(bwd.begin(), bwd.end(), static_cast<int>(i)) != bwd.end())
        out.insert({static_cast<int>(i), j});
    }
  }
  return out;
}

}  // namespace

TEST_CASE("orthogonal unit vectors are perfect mutual nearest neighbors") {
  Tensor a({2, 3}, {1, 0, 0, 0, 1, 0});
  const auto pairs = mutual_topk(a, a, 1);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].i == pairs[0].j);
  CHECK(pairs[1].i == pairs[1].j);
  CHECK(pairs[0].dist == 0.0);
}

TEST_CASE("one-sided candidates leave the unmatched row out") {
  Tensor a({2, 3}, {1, 0, 0, 0, 1, 0});
  Tensor b({1, 3}, {1, 0, 0});
  const auto pairs = mutual_topk(a, b, 1);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].i == 0);
  CHECK(pairs[0].j == 0);
}

TEST_CASE("empty sides yield empty results") {
  Tensor a({0, 4});
  Tensor b({3, 4});
  CHECK(mutual_topk(a, b, 2).empty());
  CHECK(mutual_topk(b, a, 2).empty());
}

TEST_CASE("mutual_topk equals the exhaustive oracle over many seeds") {
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t na = 1 + rng.below(120), nb = 1 + rng.below(120);
    const int k = 1 + rng.below_int(5);
    const Tensor a = unit_rows(rng, na, 16);
    const Tensor b = unit_rows(rng, nb, 16);

    const auto got = mutual_topk(a, b, k);
    std::set<std::pair<int, int>> got_set;
    for (const auto& m : got) got_set.insert({m.i, m.j});
    CHECK(got_set == brute_mutual_topk(a, b, k));

    // Sorted by ascending distance.
    for (std::size_t t = 1; t < got.size(); ++t) CHECK(got[t - 1].dist <= got[t].dist);
  }
}

TEST_CASE("swapping inputs transposes the pair set") {
  Rng rng(7);
  const Tensor a = unit_rows(rng, 40, 8);
  const Tensor b = unit_rows(rng, 25, 8);
  const auto fwd = mutual_topk(a, b, 3);
  const auto rev = mutual_topk(b, a, 3);
  std::set<std::pair<int, int>> f, r;
  for (const auto& m : fwd) f.insert({m.i, m.j});
  for (const auto& m : rev) r.insert({m.j, m.i});
  CHECK(f == r);
}

TEST_CASE("growing k never drops a previously returned pair") {
  Rng rng(9);
  const Tensor a = unit_rows(rng, 60, 8);
  const Tensor b = unit_rows(rng, 50, 8);
  std::set<std::pair<int, int>> prev;
  for (int k = 1; k <= 6; ++k) {
    const auto pairs = mutual_topk(a, b, k);
    std::set<std::pair<int, int>> cur;
    for (const auto& m : pairs) cur.insert({m.i, m.j});
    for (const auto& p : prev) CHECK(cur.count(p) == 1);
    prev = cur;
  }
}

TEST_CASE("coarse_match over a K=1 pyramid reduces to mutual_topk") {
  Rng rng(11);
  const auto pyramid = build_pyramid(8, 8, 2, 2, 1);
  const Tensor patches = unit_rows(rng, 4, 8);
  const Tensor nodes = unit_rows(rng, 6, 8);
  MatchingConfig cfg;
  cfg.coarse_k = 2;
  const auto corr = coarse_match({patches}, nodes, pyramid, cfg);
  const auto pairs = mutual_topk(patches, nodes, 2);
  REQUIRE(corr.size() == pairs.size());
  for (std::size_t t = 0; t < corr.size(); ++t) {
    CHECK(corr[t].level == 0);
    CHECK(corr[t].row * 2 + corr[t].col == pairs[t].i);
    CHECK(corr[t].node == pairs[t].j);
    CHECK(corr[t].score == doctest::Approx(1.0 - 0.5 * pairs[t].dist * pairs[t].dist));
  }
}

TEST_CASE("coarse_match caps the correspondence count by score") {
  Rng rng(13);
  const auto pyramid = build_pyramid(16, 16, 2, 2, 2);
  const Tensor l0 = unit_rows(rng, 4, 8);
  const Tensor l1 = unit_rows(rng, 16, 8);
  Tensor nodes({20, 8});
  // Nodes equal to pool rows: lots of exact matches.
  for (int i = 0; i < 20; ++i) {
    const Tensor& src = i < 4 ? l0 : l1;
    const int r = i < 4 ? i : i - 4;
    std::copy(src.row(r), src.row(r) + 8, nodes.row(i));
  }
  MatchingConfig cfg;
  cfg.coarse_k = 3;
  cfg.max_coarse = 5;
  const auto corr = coarse_match({l0, l1}, nodes, pyramid, cfg);
  CHECK(corr.size() == 5);
  for (std::size_t t = 1; t < corr.size(); ++t) CHECK(corr[t - 1].score >= corr[t].score);
}

TEST_CASE("fine_match samples a stride-2 lattice (exactly 1/4 of the pixels)") {
  // One 40x40 patch -> 400 sampled candidates.
  const auto pyramid = build_pyramid(40, 40, 1, 1, 1);
  PointCloud cloud;
  PointPatchGraph graph;
  graph.nodes.points.push_back({0, 0, 1});
  graph.members.push_back({});
  Rng rng(15);
  const std::size_t dim = 6;
  for (int i = 0; i < 10; ++i) {
    cloud.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), 1.0});
    graph.members[0].push_back(i);
    graph.assignment.push_back(0);
  }
  const Tensor img = unit_rows(rng, 40 * 40, dim);
  const Tensor pts = unit_rows(rng, 10, dim);

  PatchCorrespondence corr{0, 0, 0, 0, 1.0};
  const auto local = fine_match(corr, pyramid, img, pts, graph, cloud, 3);
  // Every returned pixel sits on the stride-2 lattice.
  std::set<std::pair<int, int>> lattice;
  for (const auto& m : local) {
    const int c = static_cast<int>(m.pixel.x), r = static_cast<int>(m.pixel.y);
    CHECK(r % 2 == 0);
    CHECK(c % 2 == 0);
    lattice.insert({r, c});
  }
  // Sampled candidate count is 400; matches are a subset.
  CHECK(local.size() <= 400);

  // Two sampled pixels, two points with matching features -> 2 exact matches.
  // A 4x2 image with one patch samples pixels (0,0) and (2,0) on the lattice.
  Tensor img2({8, dim});
  Tensor pts2({2, dim});
  Tensor basis = unit_rows(rng, 2, dim);
  const auto tiny_pyr = build_pyramid(4, 2, 1, 1, 1);
  for (int lin = 0; lin < 8; ++lin)
    std::copy(basis.row(lin < 4 ? 0 : 1), basis.row(lin < 4 ? 0 : 1) + dim, img2.row(lin));
  std::copy(basis.row(0), basis.row(0) + dim, pts2.row(0));
  std::copy(basis.row(1), basis.row(1) + dim, pts2.row(1));
  PointCloud cloud2;
  cloud2.points.push_back({0, 0, 1});
  cloud2.points.push_back({1, 0, 1});
  PointPatchGraph graph2;
  graph2.nodes.points.push_back({0, 0, 1});
  graph2.members.push_back({0, 1});
  graph2.assignment = {0, 0};
  const auto local2 = fine_match({0, 0, 0, 0, 1.0}, tiny_pyr, img2, pts2, graph2, cloud2, 1);
  REQUIRE(local2.size() == 2);
  CHECK(local2[0].pixel.y == 0.0);  // pixel (0,0) <-> point 0
  CHECK(local2[0].point.x == 0.0);
  CHECK(local2[1].pixel.y == 2.0);  // pixel (0,2) <-> point 1
  CHECK(local2[1].point.x == 1.0);
}

TEST_CASE("fine_match equals brute-force mutual top-k on the sampled set") {
  Rng rng(19);
  const auto pyramid = build_pyramid(8, 8, 1, 1, 1);
  const std::size_t dim = 5;
  const Tensor img = unit_rows(rng, 64, dim);
  const int n_pts = 12;
  const Tensor pts = unit_rows(rng, n_pts, dim);
  PointCloud cloud;
  PointPatchGraph graph;
  graph.nodes.points.push_back({0, 0, 1});
  graph.members.push_back({});
  for (int i = 0; i < n_pts; ++i) {
    cloud.points.push_back({static_cast<double>(i), 0, 1});
    graph.members[0].push_back(i);
    graph.assignment.push_back(0);
  }
  const auto local = fine_match({0, 0, 0, 0, 1.0}, pyramid, img, pts, graph, cloud, 2);

  // Oracle over the 16 sampled pixels.
  std::vector<int> sampled;
  for (int r = 0; r < 8; r += 2)
    for (int c = 0; c < 8; c += 2) sampled.push_back(r * 8 + c);
  Tensor sub({sampled.size(), dim});
  for (std::size_t i = 0; i < sampled.size(); ++i)
    std::copy(img.row(sampled[i]), img.row(sampled[i]) + dim, sub.row(i));
  const auto oracle = brute_mutual_topk(sub, pts, 2);
  std::set<std::pair<int, int>> got;
  for (const auto& m : local) {
    const int lin = static_cast<int>(m.pixel.y) * 8 + static_cast<int>(m.pixel.x);
    const int si = static_cast<int>(std::find(sampled.begin(), sampled.end(), lin) - sampled.begin());
    got.insert({si, static_cast<int>(m.point.x)});
  }
  CHECK(got == oracle);
}

TEST_CASE("assemble dedups exact duplicates keeping the best score") {
  std::vector<DenseCorrespondence> matches;
  matches.push_back({{3, 4}, {0, 0, 1}, 0.8});
  matches.push_back({{3, 4}, {0, 0, 1}, 0.9});  // duplicate, higher score
  matches.push_back({{5, 6}, {1, 0, 1}, 0.7});
  const auto out = assemble(matches);
  REQUIRE(out.size() == 2);
  CHECK(out[0].score == 0.9);
  CHECK(out[1].score == 0.7);

  // Disjoint sets concatenate.
  std::vector<DenseCorrespondence> disjoint;
  disjoint.push_back({{0, 0}, {0, 0, 1}, 0.5});
  disjoint.push_back({{1, 0}, {2, 0, 1}, 0.4});
  CHECK(assemble(disjoint).size() == 2);

  // Idempotence.
  const auto once = assemble(matches);
  const auto twice = assemble(once);
  REQUIRE(once.size() == twice.size());
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(once[i].score == twice[i].score);
}

TEST_CASE("assemble matches a hash-set oracle on random collisions") {
  Rng rng(23);
  std::vector<DenseCorrespondence> matches;
  for (int i = 0; i < 500; ++i) {
    const double u = rng.below(10), v = rng.below(10);
    const double x = rng.below(5);
    matches.push_back({{u, v}, {x, 0, 1}, rng.uniform()});
  }
  std::map<std::tuple<double, double, double>, double> oracle;
  for (const auto& m : matches) {
    auto key = std::make_tuple(m.pixel.x, m.pixel.y, m.point.x);
    auto it = oracle.find(key);
    if (it == oracle.end() || m.score > it->second) oracle[key] = m.score;
  }
  const auto out = assemble(matches);
  REQUIRE(out.size() == oracle.size());
  for (const auto& m : out)
    CHECK(m.score == oracle.at(std::make_tuple(m.pixel.x, m.pixel.y, m.point.x)));
}
