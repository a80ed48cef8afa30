#include "xreg/matching.hpp"

#include <algorithm>
#include <map>
#include <tuple>

#include "xreg/kernels.hpp"

namespace xreg {
namespace {

// Indices of the k nearest entries of one distance row, ties by lower index.
void topk_of_row(const std::vector<double>& dist, int k, std::vector<int>& out) {
  out.resize(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) out[i] = static_cast<int>(i);
  const std::size_t kk = std::min<std::size_t>(k, dist.size());
  std::partial_sort(out.begin(), out.begin() + kk, out.end(), [&](int a, int b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return a < b;
  });
  out.resize(kk);
}

}  // namespace

std::vector<MatchPair> mutual_topk(const Tensor& a, const Tensor& b, int k) {
  if (k < 1) throw Error("mutual_topk: k must be >= 1");
  const std::size_t na = a.numel() ? a.rows() : 0;
  const std::size_t nb = b.numel() ? b.rows() : 0;
  if (na == 0 || nb == 0) return {};
  if (a.cols() != b.cols()) throw ShapeError("mutual_topk: feature width mismatch");
  const std::size_t dim = a.cols();

  // Squared distances preserve the ranking; take the root only for output.
  std::vector<double> dsq(na * nb);
  for (std::size_t i = 0; i < na; ++i) {
    double* row = dsq.data() + i * nb;
    for (std::size_t j = 0; j < nb; ++j) row[j] = kern::kernels().sqdist(a.row(i), b.row(j), dim);
  }

  std::vector<std::vector<int>> fwd(na);
  {
    std::vector<double> row(nb);
    for (std::size_t i = 0; i < na; ++i) {
      std::copy(dsq.begin() + i * nb, dsq.begin() + (i + 1) * nb, row.begin());
      topk_of_row(row, k, fwd[i]);
    }
  }
  std::vector<std::vector<int>> bwd(nb);
  {
    std::vector<double> col(na);
    for (std::size_t j = 0; j < nb; ++j) {
      for (std::size_t i = 0; i < na; ++i) col[i] = dsq[i * nb + j];
      topk_of_row(col, k, bwd[j]);
    }
  }

  std::vector<MatchPair> out;
  for (std::size_t i = 0; i < na; ++i) {
    for (int j : fwd[i]) {
      const auto& back = bwd[j];
      if (std::find(back.begin(), back.end(), static_cast<int>(i)) != back.end())
        out.push_back({static_cast<int>(i), j, std::sqrt(dsq[i * nb + j])});
    }
  }
  std::sort(out.begin(), out.end(), [](const MatchPair& x, const MatchPair& y) {
    if (x.dist != y.dist) return x.dist < y.dist;
    return std::tie(x.i, x.j) < std::tie(y.i, y.j);
  });
  return out;
}

std::vector<PatchCorrespondence> coarse_match(const std::vector<Tensor>& level_features,
                                              const Tensor& node_features, const PatchPyramid& pyramid,
                                              const MatchingConfig& cfg,
                                              const std::vector<std::vector<std::uint8_t>>* level_valid) {
  if (level_features.size() != static_cast<std::size_t>(pyramid.level_count()))
    throw ShapeError("coarse_match: level feature count does not match pyramid");
  if (node_features.numel() == 0) return {};
  const std::size_t dim = node_features.cols();

  std::size_t total = 0;
  for (int l = 0; l < pyramid.level_count(); ++l) {
    if (level_features[l].rows() != static_cast<std::size_t>(pyramid.levels[l].patch_count()) ||
        level_features[l].cols() != dim)
      throw ShapeError("coarse_match: level feature shape mismatch");
    total += level_features[l].rows();
  }

  Tensor pool({total, dim});
  struct Tag {
    int level, row, col;
  };
  std::vector<Tag> tags(total);
  std::size_t off = 0;
  for (int l = 0; l < pyramid.level_count(); ++l) {
    const auto& g = pyramid.levels[l];
    const Tensor& f = level_features[l];
    for (int p = 0; p < g.patch_count(); ++p) {
      if (level_valid != nullptr && !(*level_valid)[l].empty() && !(*level_valid)[l][p]) continue;
      std::copy(f.row(p), f.row(p) + dim, pool.row(off));
      tags[off] = {l, p / g.grid_w, p % g.grid_w};
      ++off;
    }
  }
  pool.data.resize(off * dim);
  pool.shape[0] = off;
  tags.resize(off);

  const auto pairs = mutual_topk(pool, node_features, cfg.coarse_k);
  std::vector<PatchCorrespondence> out;
  out.reserve(pairs.size());
  for (const MatchPair& m : pairs) {
    const Tag& t = tags[m.i];
    const double score = 1.0 - 0.5 * m.dist * m.dist;
    if (score < cfg.min_score) continue;
    out.push_back({t.level, t.row, t.col, m.j, score});
  }
  // mutual_topk orders by ascending distance = descending cosine score.
  if (static_cast<int>(out.size()) > cfg.max_coarse) out.resize(cfg.max_coarse);
  return out;
}

std::vector<DenseCorrespondence> fine_match(const PatchCorrespondence& corr, const PatchPyramid& pyramid,
                                            const Tensor& image_fine_rows, const Tensor& point_fine_rows,
                                            const PointPatchGraph& graph, const PointCloud& cloud, int fine_k,
                                            const std::vector<std::uint8_t>* pixel_valid, double fine_min_score) {
  const ImagePatchGrid& grid = pyramid.levels[corr.level];
  const auto range = grid.patch_pixels(corr.row, corr.col);
  const int image_w = grid.image_w;

  std::vector<int> pixel_ids;
  for (int r = range.r0; r < range.r1; r += 2) {
    for (int c = range.c0; c < range.c1; c += 2) {
      const int lin = r * image_w + c;
      if (pixel_valid != nullptr && !(*pixel_valid)[lin]) continue;
      pixel_ids.push_back(lin);
    }
  }
  const std::vector<int>& members = graph.members[corr.node];
  if (pixel_ids.empty() || members.empty()) return {};

  const std::size_t dim = image_fine_rows.cols();
  Tensor pix({pixel_ids.size(), dim});
  for (std::size_t i = 0; i < pixel_ids.size(); ++i)
    std::copy(image_fine_rows.row(pixel_ids[i]), image_fine_rows.row(pixel_ids[i]) + dim, pix.row(i));
  Tensor pts({members.size(), dim});
  for (std::size_t j = 0; j < members.size(); ++j)
    std::copy(point_fine_rows.row(members[j]), point_fine_rows.row(members[j]) + dim, pts.row(j));

  std::vector<DenseCorrespondence> out;
  for (const MatchPair& m : mutual_topk(pix, pts, fine_k)) {
    const double score = 1.0 - 0.5 * m.dist * m.dist;
    if (score < fine_min_score) continue;
    const int lin = pixel_ids[m.i];
    const Vec3& p = cloud.points[members[m.j]];
    out.push_back({{static_cast<double>(lin % image_w), static_cast<double>(lin / image_w)},
                   p,
                   score,
                   corr.level,
                   corr.row,
                   corr.col,
                   corr.node});
  }
  return out;
}

std::vector<DenseCorrespondence> assemble(std::vector<DenseCorrespondence> matches) {
  using Key = std::tuple<double, double, double, double, double>;
  std::map<Key, DenseCorrespondence> best;
  for (const DenseCorrespondence& m : matches) {
    const Key key{m.pixel.x, m.pixel.y, m.point.x, m.point.y, m.point.z};
    auto it = best.find(key);
    if (it == best.end() || m.score > it->second.score) best[key] = m;
  }
  std::vector<DenseCorrespondence> out;
  out.reserve(best.size());
  for (const auto& [key, m] : best) out.push_back(m);
  std::sort(out.begin(), out.end(), [](const DenseCorrespondence& a, const DenseCorrespondence& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.pixel.x, a.pixel.y, a.point.x, a.point.y, a.point.z) <
           std::tie(b.pixel.x, b.pixel.y, b.point.x, b.point.y, b.point.z);
  });
  return out;
}

}  // namespace xreg
