#include "xreg/train.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "xreg/groundtruth.hpp"
#include "xreg/loss.hpp"
#include "xreg/rng.hpp"

namespace xreg {
namespace {

using nlohmann::json;

struct AdamState {
  Tensor m, v;
};

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore& store, const std::unordered_map<std::string, const Tensor*>& grads, double lr) {
    ++t_;
    const double corr1 = 1.0 - std::pow(b1_, t_);
    const double corr2 = 1.0 - std::pow(b2_, t_);
    for (const auto& [name, grad] : grads) {
      if (grad == nullptr || grad->numel() == 0) continue;
      Tensor& p = store.at(name);
      AdamState& s = state_[name];
      if (s.m.numel() == 0) {
        s.m = Tensor(p.shape);
        s.v = Tensor(p.shape);
      }
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double g = grad->data[i];
        s.m.data[i] = b1_ * s.m.data[i] + (1.0 - b1_) * g;
        s.v.data[i] = b2_ * s.v.data[i] + (1.0 - b2_) * g * g;
        const double mhat = s.m.data[i] / corr1;
        const double vhat = s.v.data[i] / corr2;
        p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double b1_, b2_, eps_;
  int t_ = 0;
  std::unordered_map<std::string, AdamState> state_;
};

// Supervision data of one training pair, cached across epochs.
struct PairSupervision {
  PairGeometry geom;
  std::vector<CircleAnchor> patch_anchors;  // rows of the pooled patch axis
  std::vector<CircleAnchor> node_anchors;   // rows of the transposed matrix
  std::vector<PairLabelTable::FinePair> fine_positives;
  std::vector<Vec3> pixel_camera;  // camera-frame unprojections of fine-positive pixels
};

PairSupervision build_supervision(const PipelineConfig& cfg, const Dataset& ds, int pair_idx) {
  PairSupervision sup;
  const PointCloud& cloud = ds.pair_cloud(pair_idx);
  sup.geom = make_pair_geometry(cfg, cloud);
  const SceneSample& frame = ds.image_frame(pair_idx);
  const RigidTransform gt = ds.gt_transform(pair_idx);

  OverlapContext ctx(frame.depth, cfg.camera, gt, cloud, cfg.thresholds);
  const PairLabelTable table = compute_pair_labels(ctx, sup.geom.pyramid, sup.geom.graph);

  const int levels = sup.geom.pyramid.level_count();
  const int nodes = static_cast<int>(sup.geom.graph.nodes.size());
  std::vector<int> level_offset(levels, 0);
  int total_patches = 0;
  for (int l = 0; l < levels; ++l) {
    level_offset[l] = total_patches;
    total_patches += sup.geom.pyramid.levels[l].patch_count();
  }

  sup.patch_anchors.assign(total_patches, {});
  sup.node_anchors.assign(nodes, {});
  // Mark per-node / per-patch positive and ignore sets; everything else is a
  // negative (absent table entries have zero overlap on both sides).
  std::vector<std::uint8_t> patch_state(static_cast<std::size_t>(total_patches) * nodes, 0);  // 1 pos, 2 ignore
  for (int l = 0; l < levels; ++l) {
    for (const auto& [key, label] : table.coarse[l]) {
      const int patch = static_cast<int>(key / nodes);
      const int node = static_cast<int>(key % nodes);
      const int flat = level_offset[l] + patch;
      if (label.label == PairLabel::Positive) {
        patch_state[static_cast<std::size_t>(flat) * nodes + node] = 1;
        sup.patch_anchors[flat].positives.push_back(node);
        sup.patch_anchors[flat].positive_scales.push_back(label.final_overlap());
        sup.node_anchors[node].positives.push_back(flat);
        sup.node_anchors[node].positive_scales.push_back(label.final_overlap());
      } else if (label.label == PairLabel::Ignore) {
        patch_state[static_cast<std::size_t>(flat) * nodes + node] = 2;
      }
    }
  }
  for (int p = 0; p < total_patches; ++p) {
    auto& anchor = sup.patch_anchors[p];
    if (anchor.positives.empty()) continue;  // skipped by the loss anyway
    for (int n = 0; n < nodes; ++n)
      if (patch_state[static_cast<std::size_t>(p) * nodes + n] == 0) anchor.negatives.push_back(n);
  }
  for (int n = 0; n < nodes; ++n) {
    auto& anchor = sup.node_anchors[n];
    if (anchor.positives.empty()) continue;
    for (int p = 0; p < total_patches; ++p)
      if (patch_state[static_cast<std::size_t>(p) * nodes + n] == 0) anchor.negatives.push_back(p);
  }

  sup.fine_positives = table.fine_positives;
  sup.pixel_camera.reserve(sup.fine_positives.size());
  for (const auto& fp : sup.fine_positives) sup.pixel_camera.push_back(ctx.pixel_camera_point(fp.pixel_r, fp.pixel_c));
  return sup;
}

}  // namespace

TrainResult train_toy(const Dataset& ds, ParamStore& store, const PipelineConfig& cfg,
                      const std::string& log_path) {
  cfg.validate();
  ensure_pipeline_params(store, cfg);
  const std::vector<int> train_ids = ds.train_pairs();
  if (train_ids.empty()) throw EmptyDataset("train_toy: no training pairs");

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw IoError("cannot write " + log_path);
  }

  // Supervision is pose-dependent but parameter-independent: cache per pair.
  std::vector<PairSupervision> supervision;
  supervision.reserve(train_ids.size());
  for (int pair_idx : train_ids) supervision.push_back(build_supervision(cfg, ds, pair_idx));

  Adam adam;
  TrainResult result;
  int step = 0;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const double lr = cfg.train.lr * std::pow(1.0 - cfg.train.decay, epoch);
    // Deterministic per-epoch order.
    std::vector<int> order(train_ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL + epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    for (int local : order) {
      const int pair_idx = train_ids[local];
      const PairSupervision& sup = supervision[local];
      const SceneSample& frame = ds.image_frame(pair_idx);
      const PointCloud& cloud = ds.pair_cloud(pair_idx);
      const RigidTransform gt = ds.gt_transform(pair_idx);

      Graph g;
      GraphParams params(g, store, true);
      const HeadIds head = pipeline_forward(g, params, cfg, frame.image, cloud, sup.geom.graph);

      // Coarse circle loss over the pooled patch axis, anchored both ways.
      const int pooled = g.concat_rows(head.level_tokens);
      const int dist = g.pairwise_l2(pooled, head.node_tokens);
      int n_patch_anchors = 0, n_node_anchors = 0;
      const int loss_patch = circle_loss_over_rows(g, dist, sup.patch_anchors, cfg.loss, &n_patch_anchors);
      const int loss_node =
          circle_loss_over_rows(g, g.transpose2d(dist), sup.node_anchors, cfg.loss, &n_node_anchors);
      int coarse;
      if (n_patch_anchors + n_node_anchors > 0)
        coarse = g.scale(g.add(loss_patch, loss_node), 1.0 / (n_patch_anchors + n_node_anchors));
      else
        coarse = g.leaf(Tensor({1}), false);

      // Fine circle loss over sampled ground-truth correspondences.
      int fine = g.leaf(Tensor({1}), false);
      if (!sup.fine_positives.empty()) {
        Rng sample_rng = Rng::derive(cfg.seed ^ 0xf1e5ULL, static_cast<std::uint64_t>(step));
        const int want = std::min<int>(cfg.train.fine_samples, static_cast<int>(sup.fine_positives.size()));
        std::vector<int> chosen(sup.fine_positives.size());
        for (std::size_t i = 0; i < chosen.size(); ++i) chosen[i] = static_cast<int>(i);
        for (std::size_t i = chosen.size(); i > 1; --i) std::swap(chosen[i - 1], chosen[sample_rng.below(i)]);
        chosen.resize(want);

        std::vector<int> pixel_rows, point_rows;
        for (int idx : chosen) {
          const auto& fp = sup.fine_positives[idx];
          pixel_rows.push_back(fp.pixel_r * cfg.camera.width + fp.pixel_c);
          point_rows.push_back(fp.point);
        }
        const int px = g.l2_normalize_rows(g.gather_rows(head.image_fine, pixel_rows));
        const int pt = g.l2_normalize_rows(g.gather_rows(head.point_fine, point_rows));
        const int dfine = g.pairwise_l2(px, pt);

        // Labels between sampled pixels and sampled points from geometry.
        std::vector<CircleAnchor> row_anchors(want), col_anchors(want);
        for (int i = 0; i < want; ++i) {
          const Vec3& pix_cam = sup.pixel_camera[chosen[i]];
          const auto& fp_i = sup.fine_positives[chosen[i]];
          const Vec2 pix{static_cast<double>(fp_i.pixel_c), static_cast<double>(fp_i.pixel_r)};
          for (int j = 0; j < want; ++j) {
            const Vec3 cam = apply_transform(gt, cloud.points[sup.fine_positives[chosen[j]].point]);
            const double d3 = (cam - pix_cam).norm();
            double d2 = std::numeric_limits<double>::infinity();
            if (cam.z > 0.0) d2 = (project(cam, cfg.camera) - pix).norm();
            const PairLabel label = label_pixel_point(d3, d2, cfg.thresholds);
            if (label == PairLabel::Positive) {
              row_anchors[i].positives.push_back(j);
              row_anchors[i].positive_scales.push_back(1.0);
              col_anchors[j].positives.push_back(i);
              col_anchors[j].positive_scales.push_back(1.0);
            } else if (label == PairLabel::Negative) {
              row_anchors[i].negatives.push_back(j);
              col_anchors[j].negatives.push_back(i);
            }
          }
        }
        int rc = 0, cc = 0;
        const int lr_loss = circle_loss_over_rows(g, dfine, row_anchors, cfg.loss, &rc);
        const int lc_loss = circle_loss_over_rows(g, g.transpose2d(dfine), col_anchors, cfg.loss, &cc);
        if (rc + cc > 0) fine = g.scale(g.add(lr_loss, lc_loss), 1.0 / (rc + cc));
      }

      const int total = total_loss(g, coarse, fine, cfg.loss);
      const double total_v = g.value(total).data[0];
      const double coarse_v = g.value(coarse).data[0];
      const double fine_v = g.value(fine).data[0];
      if (!std::isfinite(total_v)) throw TrainingDiverged();

      g.backward(total);
      std::unordered_map<std::string, const Tensor*> grads;
      for (const auto& [name, id] : params.bound()) grads[name] = &g.grad_or_empty(id);
      adam.step(store, grads, lr);
      if (!store.all_finite()) throw TrainingDiverged("parameters became non-finite");

      result.log.push_back({step, coarse_v, fine_v, total_v});
      if (log.is_open()) {
        log << json{{"step", step}, {"coarse", coarse_v}, {"fine", fine_v}, {"total", total_v}}.dump() << "\n";
      }
      ++step;
    }
  }
  result.steps = step;
  return result;
}

}  // namespace xreg
