#include "xreg/loss.hpp"

#include <cmath>
#include <memory>

namespace xreg {

CircleLossResult circle_loss(const std::vector<double>& pos_dist, const std::vector<double>& neg_dist,
                             const std::vector<double>& pos_scale, const std::vector<double>& neg_scale,
                             const CircleLossConfig& cfg) {
  cfg.validate();
  if (pos_scale.size() != pos_dist.size() || neg_scale.size() != neg_dist.size())
    throw Error("circle_loss: scale count mismatch");

  CircleLossResult out;
  out.grad_pos.assign(pos_dist.size(), 0.0);
  out.grad_neg.assign(neg_dist.size(), 0.0);
  if (pos_dist.empty() || neg_dist.empty()) return out;

  std::vector<double> pos_terms(pos_dist.size()), neg_terms(neg_dist.size());
  std::vector<double> pos_w(pos_dist.size()), neg_w(neg_dist.size());
  double sum_pos = 0.0, sum_neg = 0.0;
  for (std::size_t j = 0; j < pos_dist.size(); ++j) {
    const double margin = pos_dist[j] - cfg.delta_p;
    pos_w[j] = std::max(0.0, cfg.gamma * pos_scale[j] * margin);
    pos_terms[j] = std::exp(pos_w[j] * margin);
    sum_pos += pos_terms[j];
  }
  for (std::size_t k = 0; k < neg_dist.size(); ++k) {
    const double margin = cfg.delta_n - neg_dist[k];
    neg_w[k] = std::max(0.0, cfg.gamma * neg_scale[k] * margin);
    neg_terms[k] = std::exp(neg_w[k] * margin);
    sum_neg += neg_terms[k];
  }

  const double z = 1.0 + sum_pos * sum_neg;
  out.value = std::log(z) / cfg.gamma;

  const double common = 1.0 / (cfg.gamma * z);
  for (std::size_t j = 0; j < pos_dist.size(); ++j)
    out.grad_pos[j] = common * sum_neg * pos_w[j] * pos_terms[j];
  for (std::size_t k = 0; k < neg_dist.size(); ++k)
    out.grad_neg[k] = -common * sum_pos * neg_w[k] * neg_terms[k];
  return out;
}

int circle_loss_over_rows(Graph& g, int dist_matrix, const std::vector<CircleAnchor>& row_anchors,
                          const CircleLossConfig& cfg, int* contributing) {
  const Tensor& d = g.value(dist_matrix);
  if (row_anchors.size() != d.rows()) throw ShapeError("circle_loss_over_rows: anchor count mismatch");

  double total = 0.0;
  int count = 0;
  // Gradient w.r.t. the distance matrix, assembled now with detached weights.
  auto dgrad = std::make_shared<Tensor>(d.shape);
  std::vector<double> pos_d, neg_d, neg_scale;
  for (std::size_t r = 0; r < row_anchors.size(); ++r) {
    const CircleAnchor& a = row_anchors[r];
    if (a.positives.empty()) continue;
    pos_d.clear();
    neg_d.clear();
    for (int j : a.positives) pos_d.push_back(d.at(r, j));
    for (int j : a.negatives) neg_d.push_back(d.at(r, j));
    neg_scale.assign(neg_d.size(), 1.0);
    const CircleLossResult res = circle_loss(pos_d, neg_d, a.positive_scales, neg_scale, cfg);
    total += res.value;
    ++count;
    for (std::size_t t = 0; t < a.positives.size(); ++t) dgrad->at(r, a.positives[t]) += res.grad_pos[t];
    for (std::size_t t = 0; t < a.negatives.size(); ++t) dgrad->at(r, a.negatives[t]) += res.grad_neg[t];
  }
  if (contributing != nullptr) *contributing = count;

  Tensor value({1});
  value.data[0] = total;
  return g.custom(std::move(value), {dist_matrix}, [dist_matrix, dgrad](Graph& gg, int self) {
    const double go = gg.grad(self).data[0];
    Tensor scaled(dgrad->shape);
    for (std::size_t i = 0; i < scaled.numel(); ++i) scaled.data[i] = dgrad->data[i] * go;
    gg.accumulate_grad(dist_matrix, scaled);
  });
}

int total_loss(Graph& g, int coarse, int fine, const CircleLossConfig& cfg) {
  return g.add(coarse, g.scale(fine, cfg.lambda_fine));
}

}  // namespace xreg
