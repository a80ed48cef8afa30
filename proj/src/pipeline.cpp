#include "xreg/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "xreg/kernels.hpp"
#include "xreg/metrics.hpp"
#include "xreg/parallel.hpp"
#include "xreg/registration.hpp"

namespace xreg {
namespace {

using nlohmann::json;

Tensor transformer_grid_coords(const PipelineConfig& cfg) {
  const auto grid = partition_image(cfg.camera.height, cfg.camera.width, cfg.patching.transformer_grid_h,
                                    cfg.patching.transformer_grid_w);
  Tensor coords({static_cast<std::size_t>(grid.patch_count()), 2});
  for (int r = 0; r < grid.grid_h; ++r) {
    for (int c = 0; c < grid.grid_w; ++c) {
      const Vec2 center = grid.patch_center(r, c);
      // Normalized to [-1, 1] so the embedding frequencies are scale free.
      coords.at(grid.patch_index(r, c), 0) = 2.0 * center.x / (cfg.camera.width - 1) - 1.0;
      coords.at(grid.patch_index(r, c), 1) = 2.0 * center.y / (cfg.camera.height - 1) - 1.0;
    }
  }
  return coords;
}

Tensor node_coords(const PointPatchGraph& graph) {
  Tensor coords({graph.nodes.size(), 3});
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    coords.at(i, 0) = graph.nodes.points[i].x;
    coords.at(i, 1) = graph.nodes.points[i].y;
    coords.at(i, 2) = graph.nodes.points[i].z;
  }
  return coords;
}

HeadIds head_from_backbone(Graph& g, GraphParams& params, const PipelineConfig& cfg, const BackboneIds& backbone,
                           const PointPatchGraph& graph) {
  const int tg_h = cfg.patching.transformer_grid_h, tg_w = cfg.patching.transformer_grid_w;

  const int resized = g.resize_bilinear(backbone.image_coarse_chw, tg_h, tg_w);
  int tokens2d = g.chw_to_rows(resized);
  tokens2d = add_positional(g, params, "pos2d", tokens2d, transformer_grid_coords(cfg), cfg.neural.fourier_len_2d);
  int tokens3d = add_positional(g, params, "pos3d", backbone.node_rows, node_coords(graph), cfg.neural.fourier_len_3d);

  const auto [h2d, h3d] = refine_features(g, params, "refine", tokens2d, tokens3d, cfg.refine_config());
  auto levels = pyramid_feature_stack(g, params, "pyr", h2d, tg_h, tg_w, cfg.patching.pyramid_levels);

  HeadIds out;
  for (int id : levels) out.level_tokens.push_back(g.l2_normalize_rows(id));
  out.node_tokens = g.l2_normalize_rows(h3d);
  // Fine rows stay raw here: interior background pixels are exactly zero, so
  // normalization happens downstream on the rows actually used.
  out.image_fine = backbone.image_fine_rows;
  out.point_fine = backbone.point_fine_rows;
  return out;
}

PairFeatures features_from_head(Graph& g, const HeadIds& head, const PipelineConfig& cfg,
                                const DepthMap* depth) {
  PairFeatures f;
  for (int id : head.level_tokens) f.level_features.push_back(g.value(id));
  f.node_features = g.value(head.node_tokens);
  f.image_fine = g.value(g.l2_normalize_rows(head.image_fine, 1e-12));
  f.point_fine = g.value(g.l2_normalize_rows(head.point_fine, 1e-12));
  if (depth != nullptr) {
    f.pixel_valid.assign(f.image_fine.rows(), 0);
    for (int r = 0; r < cfg.camera.height; ++r)
      for (int c = 0; c < cfg.camera.width; ++c)
        if (depth->valid(r, c)) f.pixel_valid[static_cast<std::size_t>(r) * cfg.camera.width + c] = 1;
  }
  return f;
}

// Random Fourier feature basis: z(p) = [cos(w_j . p + b_j)]_j with
// w ~ N(0, 1/sigma^2). E[z(p) . z(q)] tracks the RBF kernel
// exp(-|p-q|^2 / (2 sigma^2)), so dot products of summed signatures estimate
// region overlap.
struct RffBasis {
  std::vector<Vec3> freqs;
  std::vector<double> phases;

  RffBasis(int dim, double sigma, std::uint64_t seed) {
    Rng rng(seed ^ 0x0f0f0f0fULL);
    freqs.reserve(dim);
    phases.reserve(dim);
    for (int j = 0; j < dim; ++j) {
      freqs.push_back({rng.gaussian() / sigma, rng.gaussian() / sigma, rng.gaussian() / sigma});
      phases.push_back(rng.uniform(0.0, 2.0 * M_PI));
    }
  }

  void embed(const Vec3& p, double* out) const {
    for (std::size_t j = 0; j < freqs.size(); ++j) out[j] = std::cos(freqs[j].dot(p) + phases[j]);
  }
};

void normalize_rows_or_zero(Tensor& t, std::vector<std::uint8_t>* valid = nullptr) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const double sq = kern::kernels().dot(t.row(r), t.row(r), t.cols());
    if (!(sq > 1e-30)) {
      if (valid != nullptr) (*valid)[r] = 0;
      continue;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t c = 0; c < t.cols(); ++c) t.row(r)[c] *= inv;
  }
}

}  // namespace

PairGeometry make_pair_geometry(const PipelineConfig& cfg, const PointCloud& cloud) {
  PairGeometry geom;
  geom.pyramid = cfg.make_pyramid();
  const PointCloud nodes = grid_subsample(cloud, cfg.patching.voxel_node);
  geom.graph = point_to_node(cloud, nodes);
  if (cfg.patching.min_node_members > 1) {
    // Keep only well-supported nodes; points re-partition onto the rest.
    PointCloud kept;
    for (std::size_t n = 0; n < geom.graph.nodes.size(); ++n)
      if (static_cast<int>(geom.graph.members[n].size()) >= cfg.patching.min_node_members)
        kept.points.push_back(geom.graph.nodes.points[n]);
    if (!kept.empty()) geom.graph = point_to_node(cloud, kept);
  }
  return geom;
}

void ensure_pipeline_params(ParamStore& store, const PipelineConfig& cfg) {
  ensure_toy_params(store, cfg.toy_config());
  ensure_positional_params(store, "pos2d", 2, cfg.neural.fourier_len_2d, cfg.neural.width);
  ensure_positional_params(store, "pos3d", 3, cfg.neural.fourier_len_3d, cfg.neural.width);
  ensure_refine_params(store, "refine", cfg.refine_config());
  ensure_pyramid_params(store, "pyr", cfg.neural.width, cfg.patching.pyramid_levels);
}

HeadIds pipeline_forward(Graph& g, GraphParams& params, const PipelineConfig& cfg, const Tensor& image,
                         const PointCloud& cloud, const PointPatchGraph& graph) {
  const BackboneIds backbone = toy_extract(g, params, cfg.toy_config(), image, cloud, graph);
  return head_from_backbone(g, params, cfg, backbone, graph);
}

HeadIds pipeline_forward_from_dump(Graph& g, GraphParams& params, const PipelineConfig& cfg,
                                   const FeatureDump& dump, const PointPatchGraph& graph) {
  BackboneIds backbone;
  backbone.image_coarse_chw = g.leaf(dump.f2d_coarse, false);
  backbone.image_fine_rows = g.leaf(dump.f2d_fine, false);
  backbone.node_rows = g.leaf(dump.f3d_coarse, false);
  backbone.point_fine_rows = g.leaf(dump.f3d_fine, false);
  if (dump.f3d_coarse.rows() != graph.nodes.size())
    throw ShapeError("feature dump: node count does not match the pair's node graph");
  return head_from_backbone(g, params, cfg, backbone, graph);
}

PairFeatures extract_features_toy(ParamStore& store, const PipelineConfig& cfg, const Tensor& image,
                                  const PointCloud& cloud, const PointPatchGraph& graph, const DepthMap* depth) {
  Graph g;
  GraphParams params(g, store, false);
  const HeadIds head = pipeline_forward(g, params, cfg, image, cloud, graph);
  return features_from_head(g, head, cfg, depth);
}

PairFeatures extract_features_dump(ParamStore& store, const PipelineConfig& cfg, const FeatureDump& dump,
                                   const PointPatchGraph& graph, const DepthMap* depth) {
  Graph g;
  GraphParams params(g, store, false);
  const HeadIds head = pipeline_forward_from_dump(g, params, cfg, dump, graph);
  return features_from_head(g, head, cfg, depth);
}

PairFeatures extract_features_oracle(const PipelineConfig& cfg, const DepthMap& depth,
                                     const RigidTransform& camera_to_world, const PointCloud& cloud,
                                     const PairGeometry& geom) {
  PairFeatures f;
  const CameraIntrinsics& k = cfg.camera;
  const RffBasis coarse_basis(cfg.oracle.coarse_dim, cfg.oracle.coarse_sigma, cfg.seed);

  // Per-pixel world points.
  const std::size_t n_px = static_cast<std::size_t>(k.height) * k.width;
  std::vector<Vec3> pixel_world(n_px);
  f.pixel_valid.assign(n_px, 0);
  for (int r = 0; r < k.height; ++r) {
    for (int c = 0; c < k.width; ++c) {
      if (!depth.valid(r, c)) continue;
      const std::size_t idx = static_cast<std::size_t>(r) * k.width + c;
      pixel_world[idx] = apply_transform(
          camera_to_world, unproject({static_cast<double>(c), static_cast<double>(r)}, depth.at(r, c), k));
      f.pixel_valid[idx] = 1;
    }
  }

  // Fine features: normalized homogeneous coordinates, so unit-row distance
  // is monotone in 3D distance and mutual top-k is nearest-neighbor matching.
  const double hom = cfg.oracle.fine_homogeneous;
  auto embed_fine = [hom](const Vec3& p, double* out) {
    out[0] = p.x;
    out[1] = p.y;
    out[2] = p.z;
    out[3] = hom;
  };
  f.image_fine = Tensor({n_px, 4});
  for (std::size_t i = 0; i < n_px; ++i)
    if (f.pixel_valid[i]) embed_fine(pixel_world[i], f.image_fine.row(i));
  normalize_rows_or_zero(f.image_fine, &f.pixel_valid);

  f.point_fine = Tensor({cloud.size(), 4});
  for (std::size_t i = 0; i < cloud.size(); ++i) embed_fine(cloud.points[i], f.point_fine.row(i));
  normalize_rows_or_zero(f.point_fine);

  // Coarse features: region signatures. The cosine between a patch signature
  // and a node signature estimates their spatial overlap, which is exactly
  // what the coarse matcher is supposed to maximize across pyramid levels.
  // Patch pixels are first resampled onto the cloud's voxel grid so both
  // sides carry the same world-space density (pixel density would otherwise
  // overweight near and oblique surfaces).
  // One extra channel penalizes size-mismatched pairings: unit kernel
  // signature plus size_weight * log2(region voxel count / 64), renormalized.
  const std::size_t sig_dim = static_cast<std::size_t>(cfg.oracle.coarse_dim);
  auto append_size_and_normalize = [&](Tensor& t, const std::vector<double>& counts,
                                       std::vector<std::uint8_t>* valid) {
    for (std::size_t r = 0; r < t.rows(); ++r) {
      if (valid != nullptr && !(*valid)[r]) continue;
      t.row(r)[sig_dim] = cfg.oracle.size_weight * std::log2(std::max(counts[r], 1.0) / 64.0);
    }
    normalize_rows_or_zero(t, valid);
  };

  f.node_features = Tensor({geom.graph.nodes.size(), sig_dim + 1});
  std::vector<double> node_counts(geom.graph.nodes.size());
  {
    std::vector<double> buf(cfg.oracle.coarse_dim);
    for (std::size_t n = 0; n < geom.graph.nodes.size(); ++n) {
      double* dst = f.node_features.row(n);
      for (int pi : geom.graph.members[n]) {
        coarse_basis.embed(cloud.points[pi], buf.data());
        kern::kernels().axpy(dst, 1.0, buf.data(), buf.size());
      }
      const double sq = kern::kernels().dot(dst, dst, sig_dim);
      if (sq > 1e-30) {
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t c = 0; c < sig_dim; ++c) dst[c] *= inv;
      }
      node_counts[n] = static_cast<double>(geom.graph.members[n].size());
    }
  }
  append_size_and_normalize(f.node_features, node_counts, nullptr);

  f.level_valid.resize(geom.pyramid.level_count());
  std::vector<double> buf(cfg.oracle.coarse_dim);
  for (int l = 0; l < geom.pyramid.level_count(); ++l) {
    const auto& grid = geom.pyramid.levels[l];
    Tensor sig({static_cast<std::size_t>(grid.patch_count()), sig_dim + 1});
    std::vector<double> patch_counts(grid.patch_count(), 0.0);
    auto& valid = f.level_valid[l];
    valid.assign(grid.patch_count(), 1);
    for (int pr = 0; pr < grid.grid_h; ++pr) {
      for (int pc = 0; pc < grid.grid_w; ++pc) {
        const int p = grid.patch_index(pr, pc);
        const auto range = grid.patch_pixels(pr, pc);
        PointCloud patch_points;
        for (int r = range.r0; r < range.r1; ++r)
          for (int c = range.c0; c < range.c1; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * k.width + c;
            if (f.pixel_valid[idx]) patch_points.points.push_back(pixel_world[idx]);
          }
        if (patch_points.empty()) {
          valid[p] = 0;
          continue;
        }
        const PointCloud resampled = grid_subsample(patch_points, cfg.patching.voxel_fine);
        double* dst = sig.row(p);
        for (const Vec3& q : resampled.points) {
          coarse_basis.embed(q, buf.data());
          kern::kernels().axpy(dst, 1.0, buf.data(), buf.size());
        }
        const double sq = kern::kernels().dot(dst, dst, sig_dim);
        if (sq > 1e-30) {
          const double inv = 1.0 / std::sqrt(sq);
          for (std::size_t c = 0; c < sig_dim; ++c) dst[c] *= inv;
        }
        patch_counts[p] = static_cast<double>(resampled.size());
      }
    }
    append_size_and_normalize(sig, patch_counts, &valid);
    f.level_features.push_back(std::move(sig));
  }
  return f;
}

PairMatches match_pair(const PipelineConfig& cfg, const PairFeatures& features, const PairGeometry& geom,
                       const PointCloud& cloud) {
  PairMatches out;
  out.coarse = coarse_match(features.level_features, features.node_features, geom.pyramid, cfg.matching,
                            features.level_valid.empty() ? nullptr : &features.level_valid);

  std::vector<std::vector<DenseCorrespondence>> local(out.coarse.size());
  const std::vector<std::uint8_t>* mask = features.pixel_valid.empty() ? nullptr : &features.pixel_valid;
  parallel_for(static_cast<int>(out.coarse.size()), cfg.threads, [&](int i) {
    local[i] = fine_match(out.coarse[i], geom.pyramid, features.image_fine, features.point_fine, geom.graph,
                          cloud, cfg.matching.fine_k, mask, cfg.matching.fine_min_score);
  });
  std::vector<DenseCorrespondence> merged;
  for (auto& l : local) merged.insert(merged.end(), l.begin(), l.end());
  out.dense = assemble(std::move(merged));
  return out;
}

PairEvaluation evaluate_pair(const PipelineConfig& cfg, const Dataset& ds, int pair_idx,
                             const PairFeatures& features, const PairGeometry& geom) {
  const SceneSample& frame = ds.image_frame(pair_idx);
  const PointCloud& cloud = ds.pair_cloud(pair_idx);
  const RigidTransform gt = ds.gt_transform(pair_idx);

  const PairMatches matches = match_pair(cfg, features, geom, cloud);

  PairEvaluation eval;
  eval.dense_count = static_cast<int>(matches.dense.size());
  eval.coarse_count = static_cast<int>(matches.coarse.size());
  eval.inlier_ratio = inlier_ratio(matches.dense, gt, cfg.camera, frame.depth, cfg.metrics.tau1).value;

  OverlapContext ctx(frame.depth, cfg.camera, gt, cloud, cfg.thresholds);
  eval.pir = patch_inlier_ratio(matches.coarse, ctx, geom.pyramid, geom.graph, cfg.metrics.pir_tau).value;

  std::vector<Correspondence2D3D> corrs;
  corrs.reserve(matches.dense.size());
  for (const auto& m : matches.dense) corrs.push_back({m.point, m.pixel});
  try {
    RansacConfig rcfg = cfg.ransac;
    rcfg.seed = cfg.seed;
    rcfg.threads = cfg.threads;
    const RegistrationResult result = pnp_ransac(corrs, cfg.camera, rcfg);
    eval.registered = true;
    eval.rmse = rmse(cloud, result.transform, gt);
  } catch (const Error&) {
    eval.registered = false;
    eval.rmse = std::numeric_limits<double>::infinity();
  }
  return eval;
}

DatasetEvaluation evaluate_dataset_full(const PipelineConfig& cfg, const Dataset& ds,
                                        const std::vector<int>& pair_indices, const FeatureFn& features) {
  DatasetEvaluation out;
  out.report.pair_indices = pair_indices;
  out.report.per_pair.resize(pair_indices.size());
  out.dense.resize(pair_indices.size());
  out.poses.resize(pair_indices.size());
  out.registered.assign(pair_indices.size(), 0);

  for (std::size_t i = 0; i < pair_indices.size(); ++i) {
    const int pair_idx = pair_indices[i];
    const PointCloud& cloud = ds.pair_cloud(pair_idx);
    const PairGeometry geom = make_pair_geometry(cfg, cloud);
    const PairFeatures f = features(pair_idx, geom);
    const SceneSample& frame = ds.image_frame(pair_idx);
    const RigidTransform gt = ds.gt_transform(pair_idx);

    const PairMatches matches = match_pair(cfg, f, geom, cloud);
    PairEvaluation eval;
    eval.dense_count = static_cast<int>(matches.dense.size());
    eval.coarse_count = static_cast<int>(matches.coarse.size());
    eval.inlier_ratio = inlier_ratio(matches.dense, gt, cfg.camera, frame.depth, cfg.metrics.tau1).value;
    OverlapContext ctx(frame.depth, cfg.camera, gt, cloud, cfg.thresholds);
    eval.pir = patch_inlier_ratio(matches.coarse, ctx, geom.pyramid, geom.graph, cfg.metrics.pir_tau).value;

    std::vector<Correspondence2D3D> corrs;
    for (const auto& m : matches.dense) corrs.push_back({m.point, m.pixel});
    try {
      RansacConfig rcfg = cfg.ransac;
      rcfg.seed = cfg.seed;
      rcfg.threads = cfg.threads;
      const RegistrationResult result = pnp_ransac(corrs, cfg.camera, rcfg);
      eval.registered = true;
      eval.rmse = rmse(cloud, result.transform, gt);
      out.poses[i] = result.transform;
      out.registered[i] = 1;
    } catch (const Error&) {
      eval.registered = false;
      eval.rmse = std::numeric_limits<double>::infinity();
    }
    out.report.per_pair[i] = eval;
    out.dense[i] = matches.dense;
  }

  // Summary.
  std::vector<double> irs, rmses;
  double ir_sum = 0.0, pir_sum = 0.0;
  for (const auto& e : out.report.per_pair) {
    irs.push_back(e.inlier_ratio);
    rmses.push_back(e.rmse);
    ir_sum += e.inlier_ratio;
    pir_sum += e.pir;
  }
  if (!out.report.per_pair.empty()) {
    out.report.ir_mean = ir_sum / out.report.per_pair.size();
    out.report.pir_mean = pir_sum / out.report.per_pair.size();
    out.report.fmr = feature_matching_recall(irs, cfg.metrics.tau2);
    out.report.rr = registration_recall(rmses, cfg.metrics.tau3);
  }
  return out;
}

EvalReport evaluate_dataset(const PipelineConfig& cfg, const Dataset& ds, const std::vector<int>& pair_indices,
                            const FeatureFn& features) {
  return evaluate_dataset_full(cfg, ds, pair_indices, features).report;
}

void write_report_json(const std::string& path, const EvalReport& report) {
  json per_pair = json::array();
  for (std::size_t i = 0; i < report.per_pair.size(); ++i) {
    const auto& e = report.per_pair[i];
    json j = {{"pair", report.pair_indices[i]},
              {"ir", e.inlier_ratio},
              {"pir", e.pir},
              {"registered", e.registered},
              {"dense", e.dense_count},
              {"coarse", e.coarse_count}};
    j["rmse"] = std::isfinite(e.rmse) ? json(e.rmse) : json("inf");
    per_pair.push_back(j);
  }
  json j = {{"per_pair", per_pair},
            {"summary", {{"IR", report.ir_mean}, {"FMR", report.fmr}, {"RR", report.rr}, {"PIR", report.pir_mean}}}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "pair,ir,rmse,pir,registered,dense,coarse\n";
  for (std::size_t i = 0; i < report.per_pair.size(); ++i) {
    const auto& e = report.per_pair[i];
    out << report.pair_indices[i] << "," << e.inlier_ratio << ",";
    if (std::isfinite(e.rmse))
      out << e.rmse;
    else
      out << "inf";
    out << "," << e.pir << "," << (e.registered ? 1 : 0) << "," << e.dense_count << "," << e.coarse_count << "\n";
  }
}

void write_report_curves(const std::string& path, const PipelineConfig& cfg, const Dataset& ds,
                         const EvalReport& report, const std::vector<std::vector<DenseCorrespondence>>& dense,
                         const std::vector<RigidTransform>& poses, const std::vector<std::uint8_t>& registered) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "metric,threshold,value\n";

  // IR vs tau1 sweep.
  for (double tau = 0.01; tau <= 0.1001; tau += 0.01) {
    double sum = 0.0;
    for (std::size_t i = 0; i < report.pair_indices.size(); ++i) {
      const int pair_idx = report.pair_indices[i];
      sum += inlier_ratio(dense[i], ds.gt_transform(pair_idx), cfg.camera, ds.image_frame(pair_idx).depth, tau)
                 .value;
    }
    out << "IR," << tau << "," << (report.pair_indices.empty() ? 0.0 : sum / report.pair_indices.size()) << "\n";
  }

  // RR vs tau3 sweep.
  for (double tau = 0.02; tau <= 0.3001; tau += 0.02) {
    std::vector<double> rmses;
    for (std::size_t i = 0; i < report.pair_indices.size(); ++i) {
      if (!registered[i]) {
        rmses.push_back(std::numeric_limits<double>::infinity());
        continue;
      }
      const int pair_idx = report.pair_indices[i];
      rmses.push_back(rmse(ds.pair_cloud(pair_idx), poses[i], ds.gt_transform(pair_idx)));
    }
    out << "RR," << tau << "," << (rmses.empty() ? 0.0 : registration_recall(rmses, tau)) << "\n";
  }

  // FMR vs tau2 sweep (over the tau1-default IRs).
  std::vector<double> irs;
  for (const auto& e : report.per_pair) irs.push_back(e.inlier_ratio);
  for (double tau = 0.05; tau <= 0.5001; tau += 0.05)
    out << "FMR," << tau << "," << (irs.empty() ? 0.0 : feature_matching_recall(irs, tau)) << "\n";
}

}  // namespace xreg
