#include "xreg/neural.hpp"

#include <cmath>

#include "xreg/rng.hpp"

namespace xreg {

std::vector<double> fourier_embed(double x, int length) {
  if (!std::isfinite(x)) throw Error("fourier_embed: non-finite input");
  if (length < 0) throw Error("fourier_embed: negative length");
  std::vector<double> out;
  out.reserve(2 * length + 1);
  out.push_back(x);
  double freq = 1.0;
  for (int l = 0; l < length; ++l) {
    out.push_back(std::sin(freq * x));
    out.push_back(std::cos(freq * x));
    freq *= 2.0;
  }
  return out;
}

Tensor fourier_embed_rows(const Tensor& coords, int length) {
  if (coords.ndim() != 2) throw ShapeError("fourier_embed_rows: needs (n, k)");
  const std::size_t n = coords.rows(), k = coords.cols();
  const std::size_t per = 2 * static_cast<std::size_t>(length) + 1;
  Tensor out({n, k * per});
  for (std::size_t r = 0; r < n; ++r) {
    double* dst = out.row(r);
    for (std::size_t c = 0; c < k; ++c) {
      const auto e = fourier_embed(coords.at(r, c), length);
      std::copy(e.begin(), e.end(), dst + c * per);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// parameters

Tensor& ParamStore::insert(const std::string& name, Tensor t) {
  auto [it, inserted] = values_.emplace(name, std::move(t));
  if (inserted) names_.push_back(name);
  return it->second;
}

Tensor& ParamStore::create(const std::string& name, std::vector<std::size_t> shape, double init_scale) {
  if (Tensor* existing = find(name)) return *existing;
  Tensor t(std::move(shape));
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  Rng rng = Rng::derive(seed_, h);
  for (double& v : t.data) v = rng.gaussian() * init_scale;
  return insert(name, std::move(t));
}

Tensor& ParamStore::zeros(const std::string& name, std::vector<std::size_t> shape) {
  if (Tensor* existing = find(name)) return *existing;
  return insert(name, Tensor(std::move(shape)));
}

Tensor* ParamStore::find(const std::string& name) {
  auto it = values_.find(name);
  return it == values_.end() ? nullptr : &it->second;
}

const Tensor* ParamStore::find(const std::string& name) const {
  auto it = values_.find(name);
  return it == values_.end() ? nullptr : &it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  if (Tensor* t = find(name)) return *t;
  throw Error("unknown parameter: " + name);
}

bool ParamStore::all_finite() const {
  for (const auto& name : names_)
    if (!find(name)->all_finite()) return false;
  return true;
}

int GraphParams::operator()(const std::string& name) {
  auto it = ids_.find(name);
  if (it != ids_.end()) return it->second;
  const int id = graph_->leaf(store_->at(name), trainable_);
  ids_.emplace(name, id);
  return id;
}

// ---------------------------------------------------------------------------
// attention

namespace {

double he_scale(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

}  // namespace

void ensure_attention_params(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.width;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  store.create(prefix + ".wq", {d, d}, s);
  store.create(prefix + ".wk", {d, d}, s);
  store.create(prefix + ".wv", {d, d}, s);
  store.create(prefix + ".mlp_w1", {d, d}, he_scale(d));
  store.zeros(prefix + ".mlp_b1", {d});
  // Zero output map: the block starts as the identity thanks to the residual.
  store.zeros(prefix + ".mlp_w2", {d, d});
  store.zeros(prefix + ".mlp_b2", {d});
}

int attention_block(Graph& g, GraphParams& params, const std::string& prefix, int anchor, int memory,
                    const AttentionConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.width;
  if (g.value(anchor).cols() != d || g.value(memory).cols() != d)
    throw ShapeError("attention: token width mismatch");
  if (g.value(memory).rows() == 0) throw EmptyMemory();

  const int q = g.matmul(anchor, params(prefix + ".wq"));
  const int k = g.matmul(memory, params(prefix + ".wk"));
  const int v = g.matmul(memory, params(prefix + ".wv"));

  const std::size_t dh = d / static_cast<std::size_t>(cfg.heads);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<int> head_outputs;
  for (int h = 0; h < cfg.heads; ++h) {
    const std::size_t c0 = dh * static_cast<std::size_t>(h), c1 = c0 + dh;
    const int qh = g.slice_cols(q, c0, c1);
    const int kh = g.slice_cols(k, c0, c1);
    const int vh = g.slice_cols(v, c0, c1);
    const int scores = g.scale(g.matmul_nt(qh, kh), inv_scale);
    const int weights = g.softmax_rows(scores);
    head_outputs.push_back(g.matmul(weights, vh));
  }
  const int attended = g.concat_cols(head_outputs);

  const int hidden = g.relu(g.linear(attended, params(prefix + ".mlp_w1"), params(prefix + ".mlp_b1")));
  const int projected = g.linear(hidden, params(prefix + ".mlp_w2"), params(prefix + ".mlp_b2"));
  return g.add(anchor, projected);
}

Tensor attention_reference(const Tensor& anchor, const Tensor& memory, const Tensor& wq, const Tensor& wk,
                           const Tensor& wv, int heads) {
  // Direct dense evaluation: per head, softmax(q k^T / sqrt(dh)) v.
  const std::size_t d = anchor.cols();
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const std::size_t na = anchor.rows(), nm = memory.rows();

  auto project = [&](const Tensor& x, const Tensor& w) {
    Tensor out({x.rows(), d});
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t l = 0; l < d; ++l) s += x.at(i, l) * w.at(l, j);
        out.at(i, j) = s;
      }
    return out;
  };
  const Tensor q = project(anchor, wq);
  const Tensor k = project(memory, wk);
  const Tensor v = project(memory, wv);

  Tensor out({na, d});
  for (int h = 0; h < heads; ++h) {
    const std::size_t c0 = dh * static_cast<std::size_t>(h);
    for (std::size_t i = 0; i < na; ++i) {
      std::vector<double> logits(nm);
      double mx = -1e300;
      for (std::size_t j = 0; j < nm; ++j) {
        double s = 0.0;
        for (std::size_t l = 0; l < dh; ++l) s += q.at(i, c0 + l) * k.at(j, c0 + l);
        logits[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, logits[j]);
      }
      double denom = 0.0;
      for (double& lv : logits) {
        lv = std::exp(lv - mx);
        denom += lv;
      }
      for (std::size_t j = 0; j < nm; ++j)
        for (std::size_t l = 0; l < dh; ++l) out.at(i, c0 + l) += logits[j] / denom * v.at(j, c0 + l);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// refinement stack

void ensure_refine_params(ParamStore& store, const std::string& prefix, const RefineConfig& cfg) {
  for (int r = 0; r < cfg.rounds; ++r) {
    const std::string base = prefix + ".round" + std::to_string(r);
    ensure_attention_params(store, base + ".self2d", cfg.attention);
    ensure_attention_params(store, base + ".self3d", cfg.attention);
    ensure_attention_params(store, base + ".cross2d", cfg.attention);
    ensure_attention_params(store, base + ".cross3d", cfg.attention);
  }
}

std::pair<int, int> refine_features(Graph& g, GraphParams& params, const std::string& prefix, int image_tokens,
                                    int point_tokens, const RefineConfig& cfg) {
  int x2 = image_tokens, x3 = point_tokens;
  for (int r = 0; r < cfg.rounds; ++r) {
    const std::string base = prefix + ".round" + std::to_string(r);
    x2 = attention_block(g, params, base + ".self2d", x2, x2, cfg.attention);
    x3 = attention_block(g, params, base + ".self3d", x3, x3, cfg.attention);
    x2 = attention_block(g, params, base + ".cross2d", x2, x3, cfg.attention);
    x3 = attention_block(g, params, base + ".cross3d", x3, x2, cfg.attention);
  }
  return {x2, x3};
}

// ---------------------------------------------------------------------------
// positional augmentation

void ensure_positional_params(ParamStore& store, const std::string& prefix, std::size_t coord_dim, int fourier_len,
                              std::size_t width) {
  const std::size_t in = coord_dim * (2 * static_cast<std::size_t>(fourier_len) + 1);
  store.create(prefix + ".w", {in, width}, 1.0 / std::sqrt(static_cast<double>(in)));
  store.zeros(prefix + ".b", {width});
}

int add_positional(Graph& g, GraphParams& params, const std::string& prefix, int features, const Tensor& coords,
                   int fourier_len) {
  if (coords.rows() != g.value(features).rows()) throw ShapeError("add_positional: coords rows mismatch");
  const int embedded = g.leaf(fourier_embed_rows(coords, fourier_len), false);
  const int projected = g.linear(embedded, params(prefix + ".w"), params(prefix + ".b"));
  return g.add(features, projected);
}

// ---------------------------------------------------------------------------
// pyramid stack

void ensure_pyramid_params(ParamStore& store, const std::string& prefix, std::size_t width, int levels) {
  for (int l = 0; l < levels; ++l) {
    const std::string base = prefix + ".stage" + std::to_string(l);
    store.create(base + ".w", {width, width}, 1.0 / std::sqrt(static_cast<double>(width)));
    store.zeros(base + ".b", {width});
  }
}

std::vector<int> pyramid_feature_stack(Graph& g, GraphParams& params, const std::string& prefix, int tokens,
                                       int grid_h, int grid_w, int levels) {
  if (g.value(tokens).rows() != static_cast<std::size_t>(grid_h) * grid_w)
    throw ShapeError("pyramid_feature_stack: token count does not match grid");
  std::vector<int> finest_first;
  int current = tokens;
  int h = grid_h, w = grid_w;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) {
      if (h % 2 != 0 || w % 2 != 0) throw ShapeError("pyramid_feature_stack: grid not divisible by 2");
      // 2x2 mean pool expressed as a segment mean over token rows.
      std::vector<int> assign(static_cast<std::size_t>(h) * w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) assign[static_cast<std::size_t>(y) * w + x] = (y / 2) * (w / 2) + (x / 2);
      h /= 2;
      w /= 2;
      current = g.segment_mean(current, std::move(assign), static_cast<std::size_t>(h) * w);
    }
    const std::string base = prefix + ".stage" + std::to_string(l);
    current = g.linear(current, params(base + ".w"), params(base + ".b"));
    finest_first.push_back(current);
  }
  return std::vector<int>(finest_first.rbegin(), finest_first.rend());
}

// ---------------------------------------------------------------------------
// toy feature extractor

void ensure_toy_params(ParamStore& store, const ToyExtractorConfig& cfg) {
  cfg.validate();
  const int cs = cfg.stem_channels;
  const int c1 = cfg.stage_channels[0], c2 = cfg.stage_channels[1], c3 = cfg.stage_channels[2];
  store.create("toy2d.stem.w", {static_cast<std::size_t>(cs), 1, 3, 3}, he_scale(9));
  store.zeros("toy2d.stem.b", {static_cast<std::size_t>(cs)});
  store.create("toy2d.tex.w", {static_cast<std::size_t>(cfg.texture_channels), static_cast<std::size_t>(cs), 3, 3},
               he_scale(9 * cs));
  store.zeros("toy2d.tex.b", {static_cast<std::size_t>(cfg.texture_channels)});
  store.create("toy2d.s1.w", {static_cast<std::size_t>(c1), static_cast<std::size_t>(cs), 3, 3}, he_scale(9 * cs));
  store.zeros("toy2d.s1.b", {static_cast<std::size_t>(c1)});
  store.create("toy2d.s2.w", {static_cast<std::size_t>(c2), static_cast<std::size_t>(c1), 3, 3}, he_scale(9 * c1));
  store.zeros("toy2d.s2.b", {static_cast<std::size_t>(c2)});
  store.create("toy2d.s3.w", {static_cast<std::size_t>(c3), static_cast<std::size_t>(c2), 3, 3}, he_scale(9 * c2));
  store.zeros("toy2d.s3.b", {static_cast<std::size_t>(c3)});
  store.create("toy2d.coarse.w", {static_cast<std::size_t>(c3), cfg.coarse_width}, he_scale(c3));
  store.zeros("toy2d.coarse.b", {cfg.coarse_width});
  const std::size_t fine_in = 1 + static_cast<std::size_t>(cs) + cfg.texture_channels + c1 + c2 + c3;
  store.create("toy2d.fine.w", {fine_in, cfg.fine_width}, he_scale(fine_in));
  store.zeros("toy2d.fine.b", {cfg.fine_width});

  const std::size_t embed = 3 * (2 * static_cast<std::size_t>(cfg.point_fourier_len) + 1);
  store.create("toy3d.mlp1.w", {embed, cfg.point_hidden}, he_scale(embed));
  store.zeros("toy3d.mlp1.b", {cfg.point_hidden});
  store.create("toy3d.mlp2.w", {cfg.point_hidden, cfg.point_hidden}, he_scale(cfg.point_hidden));
  store.zeros("toy3d.mlp2.b", {cfg.point_hidden});
  store.create("toy3d.fine.w", {cfg.point_hidden, cfg.fine_width}, he_scale(cfg.point_hidden));
  store.zeros("toy3d.fine.b", {cfg.fine_width});
  store.create("toy3d.node.w", {cfg.point_hidden, cfg.coarse_width}, he_scale(cfg.point_hidden));
  store.zeros("toy3d.node.b", {cfg.coarse_width});
}

BackboneIds toy_extract(Graph& g, GraphParams& params, const ToyExtractorConfig& cfg, const Tensor& image_hw,
                        const PointCloud& cloud, const PointPatchGraph& graph) {
  cfg.validate();
  if (image_hw.ndim() != 2 || image_hw.rows() != static_cast<std::size_t>(cfg.image_h) ||
      image_hw.cols() != static_cast<std::size_t>(cfg.image_w))
    throw ShapeError("toy_extract: image resolution does not match config");
  if (cloud.empty()) throw EmptyInput("toy_extract: empty cloud");

  // 2D branch.
  Tensor img_chw({1, static_cast<std::size_t>(cfg.image_h), static_cast<std::size_t>(cfg.image_w)}, image_hw.data);
  const int image = g.leaf(std::move(img_chw), false);
  const int stem = g.relu(g.conv2d(image, params("toy2d.stem.w"), params("toy2d.stem.b"), 1, 1));
  const int texture = g.relu(g.conv2d(stem, params("toy2d.tex.w"), params("toy2d.tex.b"), 1, 1));
  const int s1 = g.relu(g.conv2d(stem, params("toy2d.s1.w"), params("toy2d.s1.b"), 2, 1));
  const int s2 = g.relu(g.conv2d(s1, params("toy2d.s2.w"), params("toy2d.s2.b"), 2, 1));
  const int s3 = g.relu(g.conv2d(s2, params("toy2d.s3.w"), params("toy2d.s3.b"), 2, 1));

  const int coarse_rows = g.chw_to_rows(s3);  // (gh*gw, c3)
  const int coarse_proj = g.linear(coarse_rows, params("toy2d.coarse.w"), params("toy2d.coarse.b"));
  // Back to (C, gh, gw) for the later bilinear resize.
  const int coarse_chw = g.transpose2d(coarse_proj);
  const int image_coarse = g.reshape(coarse_chw, {cfg.coarse_width, static_cast<std::size_t>(cfg.coarse_grid_h),
                                                  static_cast<std::size_t>(cfg.coarse_grid_w)});

  const int fine_ctx = g.concat_cols({g.chw_to_rows(image), g.chw_to_rows(stem), g.chw_to_rows(texture),
                                      g.chw_to_rows(g.upsample_nearest(s1, 2)),
                                      g.chw_to_rows(g.upsample_nearest(s2, 4)),
                                      g.chw_to_rows(g.upsample_nearest(s3, 8))});
  const int image_fine = g.linear(fine_ctx, params("toy2d.fine.w"), params("toy2d.fine.b"));

  // 3D branch.
  Tensor coords({cloud.size(), 3});
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    coords.at(i, 0) = cloud.points[i].x;
    coords.at(i, 1) = cloud.points[i].y;
    coords.at(i, 2) = cloud.points[i].z;
  }
  const int embedded = g.leaf(fourier_embed_rows(coords, cfg.point_fourier_len), false);
  const int h1 = g.relu(g.linear(embedded, params("toy3d.mlp1.w"), params("toy3d.mlp1.b")));
  const int h2 = g.relu(g.linear(h1, params("toy3d.mlp2.w"), params("toy3d.mlp2.b")));
  const int point_fine = g.linear(h2, params("toy3d.fine.w"), params("toy3d.fine.b"));
  const int node_mean = g.segment_mean(h2, graph.assignment, graph.nodes.size());
  const int node_rows = g.linear(node_mean, params("toy3d.node.w"), params("toy3d.node.b"));

  return {image_coarse, image_fine, node_rows, point_fine};
}

}  // namespace xreg
