#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <tuple>

#include "xreg/pipeline.hpp"
#include "xreg/train.hpp"

using namespace xreg;

namespace {

PipelineConfig small_cfg() {
  PipelineConfig cfg;
  cfg.seed = 7;
  cfg.synth.frames = 20;
  cfg.synth.fusion_window = 5;
  return cfg;
}

}  // namespace

TEST_CASE("oracle features drive the pipeline to perfect inlier ratio") {
  const PipelineConfig cfg = oracle_eval_config(small_cfg());
  const Dataset ds = build_pairs(cfg, generate_scene(cfg));
  REQUIRE_FALSE(ds.pairs.empty());

  std::vector<int> ids{0};
  if (ds.pairs.size() > 3) ids.push_back(3);
  const auto report = evaluate_dataset(cfg, ds, ids, [&](int p, const PairGeometry& g) {
    return extract_features_oracle(cfg, ds.image_frame(p).depth, ds.image_frame(p).camera_to_world,
                                   ds.pair_cloud(p), g);
  });
  for (const auto& e : report.per_pair) {
    CHECK(e.inlier_ratio == 1.0);
    CHECK(e.registered);
    CHECK(e.rmse < 0.05);
    CHECK(e.pir > 0.9);
    CHECK(e.dense_count > 100);
  }
}

TEST_CASE("pair geometry drops under-supported nodes when configured") {
  PipelineConfig cfg = small_cfg();
  const Dataset ds = build_pairs(cfg, generate_scene(cfg));
  const PairGeometry loose = make_pair_geometry(cfg, ds.pair_cloud(0));
  cfg.patching.min_node_members = 32;
  const PairGeometry strict = make_pair_geometry(cfg, ds.pair_cloud(0));
  CHECK(strict.graph.nodes.size() < loose.graph.nodes.size());
  for (const auto& members : strict.graph.members) CHECK(members.size() >= 1);
  // Every point still assigned.
  std::size_t total = 0;
  for (const auto& members : strict.graph.members) total += members.size();
  CHECK(total == ds.pair_cloud(0).size());
}

TEST_CASE("toy feature extraction is deterministic and matches the dump path") {
  const PipelineConfig cfg = small_cfg();
  const Dataset ds = build_pairs(cfg, generate_scene(cfg));
  ParamStore store(cfg.seed);
  ensure_pipeline_params(store, cfg);
  const PairGeometry geom = make_pair_geometry(cfg, ds.pair_cloud(0));
  const auto& frame = ds.image_frame(0);

  const PairFeatures a =
      extract_features_toy(store, cfg, frame.image, ds.pair_cloud(0), geom.graph, &frame.depth);
  const PairFeatures b =
      extract_features_toy(store, cfg, frame.image, ds.pair_cloud(0), geom.graph, &frame.depth);
  CHECK(a.node_features.data == b.node_features.data);
  CHECK(a.image_fine.data == b.image_fine.data);
  for (std::size_t l = 0; l < a.level_features.size(); ++l)
    CHECK(a.level_features[l].data == b.level_features[l].data);

  // The dump path re-runs the same head on stored backbone outputs.
  Graph g;
  GraphParams params(g, store, false);
  const BackboneIds backbone = toy_extract(g, params, cfg.toy_config(), frame.image, ds.pair_cloud(0), geom.graph);
  FeatureDump dump;
  dump.f2d_coarse = g.value(backbone.image_coarse_chw);
  dump.f2d_fine = g.value(backbone.image_fine_rows);
  dump.f3d_coarse = g.value(backbone.node_rows);
  dump.f3d_fine = g.value(backbone.point_fine_rows);
  const PairFeatures c = extract_features_dump(store, cfg, dump, geom.graph, &frame.depth);
  for (std::size_t l = 0; l < a.level_features.size(); ++l)
    for (std::size_t i = 0; i < a.level_features[l].numel(); ++i)
      CHECK(a.level_features[l].data[i] == doctest::Approx(c.level_features[l].data[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < a.point_fine.numel(); ++i)
    CHECK(a.point_fine.data[i] == doctest::Approx(c.point_fine.data[i]).epsilon(1e-12));
}

TEST_CASE("match_pair output respects provenance and dedup invariants") {
  const PipelineConfig cfg = oracle_eval_config(small_cfg());
  const Dataset ds = build_pairs(cfg, generate_scene(cfg));
  const PairGeometry geom = make_pair_geometry(cfg, ds.pair_cloud(0));
  const auto f = extract_features_oracle(cfg, ds.image_frame(0).depth, ds.image_frame(0).camera_to_world,
                                         ds.pair_cloud(0), geom);
  const PairMatches matches = match_pair(cfg, f, geom, ds.pair_cloud(0));
  REQUIRE_FALSE(matches.coarse.empty());
  REQUIRE_FALSE(matches.dense.empty());

  std::set<std::tuple<double, double, double, double, double>> seen;
  for (const auto& m : matches.dense) {
    CHECK(m.pixel.x >= 0);
    CHECK(m.pixel.x < cfg.camera.width);
    CHECK(m.pixel.y >= 0);
    CHECK(m.pixel.y < cfg.camera.height);
    CHECK(m.src_level >= 0);
    CHECK(seen.insert({m.pixel.x, m.pixel.y, m.point.x, m.point.y, m.point.z}).second);
  }
  for (std::size_t i = 1; i < matches.dense.size(); ++i)
    CHECK(matches.dense[i - 1].score >= matches.dense[i].score);
}

TEST_CASE("a couple of training steps run, reduce nothing catastrophically, and stay finite") {
  PipelineConfig cfg = small_cfg();
  cfg.synth.frames = 10;
  cfg.train.epochs = 2;
  cfg.train.lr = 1e-3;
  Dataset ds = build_pairs(cfg, generate_scene(cfg));
  // One training pair only.
  bool first = true;
  for (auto& p : ds.pairs) {
    if (p.train && first) {
      first = false;
      continue;
    }
    p.train = false;
  }
  if (ds.train_pairs().empty()) ds.pairs[0].train = true;

  ParamStore store(cfg.seed);
  const TrainResult result = train_toy(ds, store, cfg);
  CHECK(result.steps == 2 * static_cast<int>(ds.train_pairs().size()));
  for (const auto& step : result.log) {
    CHECK(std::isfinite(step.total));
    CHECK(step.total >= 0.0);
    CHECK(step.total == doctest::Approx(step.coarse + cfg.loss.lambda_fine * step.fine));
  }
  CHECK(store.all_finite());
}

TEST_CASE("zero-epoch training leaves the initialization untouched") {
  PipelineConfig cfg = small_cfg();
  cfg.synth.frames = 10;
  cfg.train.epochs = 0;
  const Dataset ds = build_pairs(cfg, generate_scene(cfg));
  ParamStore store(cfg.seed);
  const TrainResult result = train_toy(ds, store, cfg);
  CHECK(result.steps == 0);

  ParamStore reference(cfg.seed);
  ensure_pipeline_params(reference, cfg);
  for (const auto& name : reference.names()) CHECK(store.at(name).data == reference.at(name).data);
}

TEST_CASE("training is deterministic per seed") {
  PipelineConfig cfg = small_cfg();
  cfg.synth.frames = 10;
  cfg.train.epochs = 1;
  const Dataset ds = build_pairs(cfg, generate_scene(cfg));

  ParamStore a(cfg.seed), b(cfg.seed);
  train_toy(ds, a, cfg);
  train_toy(ds, b, cfg);
  for (const auto& name : a.names()) CHECK(a.at(name).data == b.at(name).data);
}
