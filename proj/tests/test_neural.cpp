#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xreg/neural.hpp"
#include "xreg/rng.hpp"

using namespace xreg;

namespace {

Tensor random_rows(Rng& rng, std::size_t r, std::size_t c, double span = 1.0) {
  Tensor t({r, c});
  for (double& v : t.data) v = rng.uniform(-span, span);
  return t;
}

}  // namespace

TEST_CASE("fourier embedding follows the [x, sin, cos, ...] layout") {
  const auto e0 = fourier_embed(0.0, 1);
  REQUIRE(e0.size() == 3);
  CHECK(e0[0] == 0.0);
  CHECK(e0[1] == 0.0);
  CHECK(e0[2] == 1.0);

  const auto e1 = fourier_embed(M_PI / 2, 2);
  REQUIRE(e1.size() == 5);
  CHECK(e1[0] == doctest::Approx(M_PI / 2));
  CHECK(e1[1] == doctest::Approx(1.0));          // sin(pi/2)
  CHECK(e1[2] == doctest::Approx(0.0).epsilon(1e-12));  // cos(pi/2)
  CHECK(e1[3] == doctest::Approx(0.0).epsilon(1e-12));  // sin(pi)
  CHECK(e1[4] == doctest::Approx(-1.0));         // cos(pi)

  const auto e2 = fourier_embed(1.7, 0);
  REQUIRE(e2.size() == 1);
  CHECK(e2[0] == 1.7);
}

TEST_CASE("fourier embedding term-by-term against the formula") {
  Rng rng(42);
  for (int rep = 0; rep < 50; ++rep) {
    const double x = rng.uniform(-4, 4);
    const int L = rng.below_int(8);
    const auto e = fourier_embed(x, L);
    REQUIRE(e.size() == static_cast<std::size_t>(2 * L + 1));
    CHECK(e[0] == x);
    for (int l = 0; l < L; ++l) {
      const double f = std::pow(2.0, l);
      CHECK(e[1 + 2 * l] == doctest::Approx(std::sin(f * x)).epsilon(1e-15));
      CHECK(e[2 + 2 * l] == doctest::Approx(std::cos(f * x)).epsilon(1e-15));
    }
  }
}

TEST_CASE("vector inputs embed per dimension and concatenate") {
  Tensor coords({2, 2}, {0.3, -1.1, 0.0, 2.2});
  const Tensor emb = fourier_embed_rows(coords, 3);
  REQUIRE(emb.cols() == 2 * 7);
  const auto a = fourier_embed(0.3, 3);
  const auto b = fourier_embed(-1.1, 3);
  for (int i = 0; i < 7; ++i) {
    CHECK(emb.at(0, i) == a[i]);
    CHECK(emb.at(0, 7 + i) == b[i]);
  }
}

TEST_CASE("add_positional: zero features yield the projected embedding; zero weights pass through") {
  Rng rng(7);
  ParamStore store(11);
  const std::size_t d = 16;
  ensure_positional_params(store, "pos", 2, 4, d);

  Tensor coords = random_rows(rng, 5, 2);
  Tensor feats = random_rows(rng, 5, d);

  {
    Graph g;
    GraphParams params(g, store, false);
    const int zero_feats = g.leaf(Tensor({5, d}), false);
    const int out = add_positional(g, params, "pos", zero_feats, coords, 4);
    // Equals the linear projection of the embedding.
    const Tensor emb = fourier_embed_rows(coords, 4);
    Graph g2;
    const int proj = g2.linear(g2.leaf(emb), g2.leaf(store.at("pos.w")), g2.leaf(store.at("pos.b")));
    for (std::size_t i = 0; i < g.value(out).numel(); ++i)
      CHECK(g.value(out).data[i] == doctest::Approx(g2.value(proj).data[i]).epsilon(1e-14));
  }
  {
    ParamStore zero_store(0);
    zero_store.zeros("pos.w", {2 * 9, d});
    zero_store.zeros("pos.b", {d});
    Graph g;
    GraphParams params(g, zero_store, false);
    const int f = g.leaf(feats, false);
    const int out = add_positional(g, params, "pos", f, coords, 4);
    for (std::size_t i = 0; i < feats.numel(); ++i) CHECK(g.value(out).data[i] == feats.data[i]);
  }
  {
    // Recomputation oracle: features + W phi(coords) directly.
    Graph g;
    GraphParams params(g, store, false);
    const int f = g.leaf(feats, false);
    const int out = add_positional(g, params, "pos", f, coords, 4);
    const Tensor emb = fourier_embed_rows(coords, 4);
    const Tensor& w = store.at("pos.w");
    const Tensor& b = store.at("pos.b");
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        double s = feats.at(r, c) + b.data[c];
        for (std::size_t l = 0; l < emb.cols(); ++l) s += emb.at(r, l) * w.at(l, c);
        CHECK(g.value(out).at(r, c) == doctest::Approx(s).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("attention: single memory row copies the row through identity v") {
  const std::size_t d = 8;
  ParamStore store(3);
  // Identity wv, zero-ish wq/wk, identity-free MLP: build by hand.
  store.zeros("blk.wq", {d, d});
  store.zeros("blk.wk", {d, d});
  Tensor& wv = store.zeros("blk.wv", {d, d});
  for (std::size_t i = 0; i < d; ++i) wv.at(i, i) = 1.0;
  store.zeros("blk.mlp_w1", {d, d});
  store.zeros("blk.mlp_b1", {d});
  store.zeros("blk.mlp_w2", {d, d});
  store.zeros("blk.mlp_b2", {d});

  Rng rng(1);
  const Tensor anchor = random_rows(rng, 4, d);
  const Tensor memory = random_rows(rng, 1, d);

  Graph g;
  GraphParams params(g, store, false);
  AttentionConfig cfg{d, 2};
  const int out = attention_block(g, params, "blk", g.leaf(anchor), g.leaf(memory), cfg);
  // Zero MLP output map means out = anchor + 0; check the raw attention
  // instead through the reference (softmax over one logit is 1).
  const Tensor ref = attention_reference(anchor, memory, store.at("blk.wq"), store.at("blk.wk"),
                                         store.at("blk.wv"), 2);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < d; ++c) CHECK(ref.at(r, c) == doctest::Approx(memory.at(0, c)).epsilon(1e-12));
  // And the residual block with zero output MLP is the identity.
  for (std::size_t i = 0; i < anchor.numel(); ++i) CHECK(g.value(out).data[i] == anchor.data[i]);
}

TEST_CASE("attention with equal keys averages the memory rows") {
  const std::size_t d = 6;
  Rng rng(2);
  Tensor anchor = random_rows(rng, 3, d);
  Tensor memory = random_rows(rng, 5, d);

  Tensor wq({d, d}), wk({d, d}), wv({d, d});
  for (std::size_t i = 0; i < d; ++i) wv.at(i, i) = 1.0;  // identity values, zero keys
  const Tensor ref = attention_reference(anchor, memory, wq, wk, wv, 1);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      double mean = 0.0;
      for (std::size_t m = 0; m < 5; ++m) mean += memory.at(m, c);
      mean /= 5.0;
      CHECK(ref.at(r, c) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention graph output matches dense formula evaluation to 1e-12") {
  const std::size_t d = 8;
  ParamStore store(99);
  AttentionConfig cfg{d, 2};
  ensure_attention_params(store, "blk", cfg);
  // Give the output MLP real weights so the whole block is exercised.
  Rng rng(5);
  for (double& v : store.at("blk.mlp_w2").data) v = rng.uniform(-0.3, 0.3);
  for (double& v : store.at("blk.mlp_b2").data) v = rng.uniform(-0.1, 0.1);

  const Tensor anchor = random_rows(rng, 2, d);
  const Tensor memory = random_rows(rng, 3, d);

  Graph g;
  GraphParams params(g, store, false);
  const int out = attention_block(g, params, "blk", g.leaf(anchor), g.leaf(memory), cfg);

  // Dense oracle: attention, then MLP with residual.
  const Tensor att = attention_reference(anchor, memory, store.at("blk.wq"), store.at("blk.wk"),
                                         store.at("blk.wv"), 2);
  const Tensor& w1 = store.at("blk.mlp_w1");
  const Tensor& b1 = store.at("blk.mlp_b1");
  const Tensor& w2 = store.at("blk.mlp_w2");
  const Tensor& b2 = store.at("blk.mlp_b2");
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<double> hidden(d);
    for (std::size_t c = 0; c < d; ++c) {
      double s = b1.data[c];
      for (std::size_t l = 0; l < d; ++l) s += att.at(r, l) * w1.at(l, c);
      hidden[c] = std::max(0.0, s);
    }
    for (std::size_t c = 0; c < d; ++c) {
      double s = anchor.at(r, c) + b2.data[c];
      for (std::size_t l = 0; l < d; ++l) s += hidden[l] * w2.at(l, c);
      CHECK(std::abs(g.value(out).at(r, c) - s) < 1e-12);
    }
  }
}

TEST_CASE("attention rejects empty memory") {
  const std::size_t d = 8;
  ParamStore store(1);
  AttentionConfig cfg{d, 2};
  ensure_attention_params(store, "blk", cfg);
  Graph g;
  GraphParams params(g, store, false);
  Rng rng(3);
  const int anchor = g.leaf(random_rows(rng, 2, d), false);
  const int memory = g.leaf(Tensor({0, d}), false);
  CHECK_THROWS_AS(attention_block(g, params, "blk", anchor, memory, cfg), EmptyMemory);
}

TEST_CASE("refine_features: zero rounds and zero-init output maps are the identity") {
  const std::size_t d = 12;
  RefineConfig cfg;
  cfg.rounds = 0;
  cfg.attention = {d, 3};
  ParamStore store(10);
  ensure_refine_params(store, "refine", cfg);

  Rng rng(8);
  const Tensor t2 = random_rows(rng, 6, d);
  const Tensor t3 = random_rows(rng, 4, d);
  {
    Graph g;
    GraphParams params(g, store, false);
    auto [o2, o3] = refine_features(g, params, "refine", g.leaf(t2), g.leaf(t3), cfg);
    for (std::size_t i = 0; i < t2.numel(); ++i) CHECK(g.value(o2).data[i] == t2.data[i]);
    for (std::size_t i = 0; i < t3.numel(); ++i) CHECK(g.value(o3).data[i] == t3.data[i]);
  }
  {
    // Fresh init keeps mlp_w2/b2 at zero, so blocks reduce to the identity.
    RefineConfig cfg3 = cfg;
    cfg3.rounds = 3;
    ParamStore store3(20);
    ensure_refine_params(store3, "refine", cfg3);
    Graph g;
    GraphParams params(g, store3, false);
    auto [o2, o3] = refine_features(g, params, "refine", g.leaf(t2), g.leaf(t3), cfg3);
    for (std::size_t i = 0; i < t2.numel(); ++i) CHECK(g.value(o2).data[i] == t2.data[i]);
    for (std::size_t i = 0; i < t3.numel(); ++i) CHECK(g.value(o3).data[i] == t3.data[i]);
  }
}

TEST_CASE("refine_features is deterministic across repeated forwards") {
  const std::size_t d = 16;
  RefineConfig cfg;
  cfg.rounds = 2;
  cfg.attention = {d, 4};
  ParamStore store(77);
  ensure_refine_params(store, "refine", cfg);
  Rng rng(6);
  for (double& v : store.at("refine.round0.self2d.mlp_w2").data) v = rng.uniform(-0.2, 0.2);
  for (double& v : store.at("refine.round1.cross3d.mlp_w2").data) v = rng.uniform(-0.2, 0.2);

  const Tensor t2 = random_rows(rng, 10, d);
  const Tensor t3 = random_rows(rng, 7, d);

  auto run = [&]() {
    Graph g;
    GraphParams params(g, store, false);
    auto [o2, o3] = refine_features(g, params, "refine", g.leaf(t2), g.leaf(t3), cfg);
    std::vector<double> out = g.value(o2).data;
    out.insert(out.end(), g.value(o3).data.begin(), g.value(o3).data.end());
    return out;
  };
  const auto a = run();
  const auto b = run();
  CHECK(a == b);
}

TEST_CASE("pyramid stack shapes and constant propagation under mean aggregation") {
  const std::size_t d = 8;
  ParamStore store(0);
  ensure_pyramid_params(store, "pyr", d, 3);
  // Identity maps: stage weights identity, biases zero.
  for (int l = 0; l < 3; ++l) {
    Tensor& w = store.at("pyr.stage" + std::to_string(l) + ".w");
    for (double& v : w.data) v = 0.0;
    for (std::size_t i = 0; i < d; ++i) w.at(i, i) = 1.0;
  }

  Tensor tokens({12 * 16, d});
  for (double& v : tokens.data) v = 3.5;

  Graph g;
  GraphParams params(g, store, false);
  const auto levels = pyramid_feature_stack(g, params, "pyr", g.leaf(tokens), 12, 16, 3);
  REQUIRE(levels.size() == 3);
  CHECK(g.value(levels[0]).rows() == 3 * 4);    // coarsest first
  CHECK(g.value(levels[1]).rows() == 6 * 8);
  CHECK(g.value(levels[2]).rows() == 12 * 16);
  for (int l = 0; l < 3; ++l)
    for (double v : g.value(levels[l]).data) CHECK(v == doctest::Approx(3.5).epsilon(1e-14));
}

TEST_CASE("pyramid stack equals a direct nested-loop reference") {
  const std::size_t d = 5;
  ParamStore store(123);
  ensure_pyramid_params(store, "pyr", d, 2);
  Rng rng(9);
  Tensor tokens = random_rows(rng, 4 * 6, d);

  Graph g;
  GraphParams params(g, store, false);
  const auto levels = pyramid_feature_stack(g, params, "pyr", g.leaf(tokens), 4, 6, 2);

  // Reference: stage0 = tokens * W0 + b0 at 4x6; stage1 = meanpool2x2(stage0) * W1 + b1.
  auto apply_linear = [&](const Tensor& x, const std::string& base) {
    const Tensor& w = store.at(base + ".w");
    const Tensor& b = store.at(base + ".b");
    Tensor out({x.rows(), d});
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < d; ++c) {
        double s = b.data[c];
        for (std::size_t l = 0; l < d; ++l) s += x.at(r, l) * w.at(l, c);
        out.at(r, c) = s;
      }
    return out;
  };
  const Tensor fine = apply_linear(tokens, "pyr.stage0");
  Tensor pooled({2 * 3, d});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x)
      for (std::size_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) s += fine.at((2 * y + dy) * 6 + (2 * x + dx), c);
        pooled.at(y * 3 + x, c) = s / 4.0;
      }
  const Tensor coarse = apply_linear(pooled, "pyr.stage1");

  for (std::size_t i = 0; i < fine.numel(); ++i)
    CHECK(g.value(levels[1]).data[i] == doctest::Approx(fine.data[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < coarse.numel(); ++i)
    CHECK(g.value(levels[0]).data[i] == doctest::Approx(coarse.data[i]).epsilon(1e-12));
}

TEST_CASE("toy extractor: deterministic shapes and seeded reproducibility") {
  ToyExtractorConfig cfg;
  cfg.image_h = 24;
  cfg.image_w = 32;
  cfg.coarse_grid_h = 3;
  cfg.coarse_grid_w = 4;
  cfg.stem_channels = 4;
  cfg.stage_channels = {5, 6, 7};
  cfg.coarse_width = 16;
  cfg.fine_width = 8;
  cfg.point_fourier_len = 3;
  cfg.point_hidden = 10;

  ParamStore store(31);
  ensure_toy_params(store, cfg);

  Rng rng(4);
  Tensor image({24, 32});
  for (double& v : image.data) v = rng.uniform(0, 1);
  PointCloud cloud;
  for (int i = 0; i < 40; ++i) cloud.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 2)});
  PointCloud nodes = grid_subsample(cloud, 0.5);
  const auto graph = point_to_node(cloud, nodes);

  auto run = [&]() {
    Graph g;
    GraphParams params(g, store, false);
    const auto ids = toy_extract(g, params, cfg, image, cloud, graph);
    REQUIRE(g.value(ids.image_coarse_chw).shape == std::vector<std::size_t>{16, 3, 4});
    REQUIRE(g.value(ids.image_fine_rows).shape == std::vector<std::size_t>{24 * 32, 8});
    REQUIRE(g.value(ids.node_rows).shape == std::vector<std::size_t>{graph.nodes.size(), 16});
    REQUIRE(g.value(ids.point_fine_rows).shape == std::vector<std::size_t>{40, 8});
    std::vector<double> all = g.value(ids.image_coarse_chw).data;
    const auto& fine = g.value(ids.point_fine_rows).data;
    all.insert(all.end(), fine.begin(), fine.end());
    return all;
  };
  CHECK(run() == run());

  // Same seed -> identical parameters -> identical outputs.
  ParamStore store2(31);
  ensure_toy_params(store2, cfg);
  for (const auto& name : store.names())
    CHECK(store.at(name).data == store2.at(name).data);
}

TEST_CASE("toy extractor gradients match central finite differences on sampled params") {
  ToyExtractorConfig cfg;
  cfg.image_h = 16;
  cfg.image_w = 16;
  cfg.coarse_grid_h = 2;
  cfg.coarse_grid_w = 2;
  cfg.stem_channels = 3;
  cfg.stage_channels = {3, 4, 4};
  cfg.coarse_width = 6;
  cfg.fine_width = 4;
  cfg.point_fourier_len = 2;
  cfg.point_hidden = 6;

  ParamStore store(55);
  ensure_toy_params(store, cfg);

  Rng rng(12);
  Tensor image({16, 16});
  for (double& v : image.data) v = rng.uniform(0, 1);
  PointCloud cloud;
  for (int i = 0; i < 15; ++i) cloud.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 2)});
  PointCloud nodes = grid_subsample(cloud, 0.8);
  const auto graph = point_to_node(cloud, nodes);

  // Scalar probe: weighted sum of every output.
  Tensor probe_c({cfg.coarse_width, 2, 2});
  Tensor probe_f({static_cast<std::size_t>(16 * 16), cfg.fine_width});
  Tensor probe_n({graph.nodes.size(), cfg.coarse_width});
  Tensor probe_p({cloud.size(), cfg.fine_width});
  for (Tensor* t : {&probe_c, &probe_f, &probe_n, &probe_p})
    for (double& v : t->data) v = rng.uniform(-1, 1);

  auto loss_value = [&](bool trainable, std::unordered_map<std::string, Tensor>* grads) {
    Graph g;
    GraphParams params(g, store, trainable);
    const auto ids = toy_extract(g, params, cfg, image, cloud, graph);
    int loss = g.sum_all(g.mul(g.reshape(ids.image_coarse_chw, probe_c.shape), g.leaf(probe_c)));
    loss = g.add(loss, g.sum_all(g.mul(ids.image_fine_rows, g.leaf(probe_f))));
    loss = g.add(loss, g.sum_all(g.mul(ids.node_rows, g.leaf(probe_n))));
    loss = g.add(loss, g.sum_all(g.mul(ids.point_fine_rows, g.leaf(probe_p))));
    if (trainable) {
      g.backward(loss);
      for (const auto& [name, id] : params.bound()) (*grads)[name] = g.grad_or_empty(id);
    }
    return g.value(loss).data[0];
  };

  std::unordered_map<std::string, Tensor> grads;
  loss_value(true, &grads);

  // Sample ~1% of the parameters (at least 40 probes across tensors).
  Rng pick(999);
  int checked = 0;
  double worst = 0.0;
  for (const auto& name : store.names()) {
    Tensor& t = store.at(name);
    const int probes = std::max<int>(2, static_cast<int>(t.numel() / 50));
    for (int p = 0; p < probes && checked < 60; ++p, ++checked) {
      const std::size_t e = pick.below(t.numel());
      const double save = t.data[e];
      const double h = 1e-5;
      t.data[e] = save + h;
      const double up = loss_value(false, nullptr);
      t.data[e] = save - h;
      const double down = loss_value(false, nullptr);
      t.data[e] = save;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads.count(name) && grads[name].numel() ? grads[name].data[e] : 0.0;
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  CHECK(checked >= 40);
  CHECK(worst < 1e-4);
}
