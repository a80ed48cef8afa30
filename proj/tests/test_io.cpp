#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "xreg/config.hpp"
#include "xreg/io.hpp"
#include "xreg/rng.hpp"

using namespace xreg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("xreg_io_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("point cloud round trip preserves f32-quantized coordinates") {
  TempDir tmp;
  Rng rng(1);
  PointCloud pc;
  for (int i = 0; i < 100; ++i) pc.points.push_back({rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)});
  save_point_cloud(tmp.file("a.pc"), pc);
  const PointCloud back = load_point_cloud(tmp.file("a.pc"));
  REQUIRE(back.size() == pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    CHECK(back.points[i].x == static_cast<float>(pc.points[i].x));
    CHECK(back.points[i].y == static_cast<float>(pc.points[i].y));
    CHECK(back.points[i].z == static_cast<float>(pc.points[i].z));
  }

  // Magic is 16 bytes, then u64 count, then N*3 f32.
  std::ifstream in(tmp.file("a.pc"), std::ios::binary);
  char magic[16];
  in.read(magic, 16);
  CHECK(std::string(magic, 8) == "XREGPC01");
  for (int i = 8; i < 16; ++i) CHECK(magic[i] == 0);
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  CHECK(count == 100);
  in.seekg(0, std::ios::end);
  CHECK(static_cast<std::size_t>(in.tellg()) == 16 + 8 + 100 * 3 * sizeof(float));
}

TEST_CASE("depth map round trip keeps NaN invalids") {
  TempDir tmp;
  DepthMap d(6, 8);
  d.at(2, 3) = 1.5f;
  d.at(5, 7) = 0.25f;
  save_depth_map(tmp.file("d.depth"), d);
  const DepthMap back = load_depth_map(tmp.file("d.depth"));
  REQUIRE(back.height == 6);
  REQUIRE(back.width == 8);
  CHECK(back.valid(2, 3));
  CHECK(back.valid(5, 7));
  CHECK(back.at(2, 3) == 1.5f);
  CHECK_FALSE(back.valid(0, 0));
  CHECK(back.valid_count() == 2);
}

TEST_CASE("wrong magic is rejected") {
  TempDir tmp;
  DepthMap d(2, 2);
  d.at(0, 0) = 1.0f;
  save_depth_map(tmp.file("d.depth"), d);
  CHECK_THROWS_AS(load_point_cloud(tmp.file("d.depth")), IoError);
  CHECK_THROWS_AS(load_image(tmp.file("d.depth")), IoError);
}

TEST_CASE("intrinsics and pose JSON round trip") {
  TempDir tmp;
  CameraIntrinsics k{125.0, 126.0, 79.5, 59.5, 160, 120};
  save_intrinsics_json(tmp.file("k.json"), k);
  const CameraIntrinsics back = load_intrinsics_json(tmp.file("k.json"));
  CHECK(back.fx == k.fx);
  CHECK(back.fy == k.fy);
  CHECK(back.cx == k.cx);
  CHECK(back.width == k.width);

  Rng rng(2);
  RigidTransform t;
  // Simple rotation about z plus translation.
  const double a = 0.7;
  t.rotation = {std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1};
  t.translation = {0.1, -0.2, 2.0};
  save_transform_json(tmp.file("t.json"), t);
  const RigidTransform back_t = load_transform_json(tmp.file("t.json"));
  for (int i = 0; i < 9; ++i) CHECK(back_t.rotation[i] == doctest::Approx(t.rotation[i]).epsilon(1e-15));
  CHECK(back_t.translation.z == 2.0);
}

TEST_CASE("correspondence JSONL round trip") {
  TempDir tmp;
  std::vector<DenseCorrespondence> corrs;
  corrs.push_back({{3.0, 4.0}, {0.1, 0.2, 1.5}, 0.95});
  corrs.push_back({{10.0, 20.0}, {-0.4, 0.0, 2.5}, 0.5});
  save_correspondences_jsonl(tmp.file("c.jsonl"), corrs);
  const auto back = load_correspondences_jsonl(tmp.file("c.jsonl"));
  REQUIRE(back.size() == 2);
  CHECK(back[0].pixel.x == 3.0);
  CHECK(back[0].point.z == 1.5);
  CHECK(back[1].score == 0.5);
}

TEST_CASE("checkpoint round trip preserves names, shapes and f32 payload") {
  TempDir tmp;
  ParamStore store(42);
  store.create("alpha.w", {4, 6}, 0.5);
  store.create("beta.b", {7}, 0.1);
  CheckpointHeader header;
  header.seed = 42;
  header.config_json = config_to_json(PipelineConfig{});
  save_checkpoint(tmp.file("ck.xck"), store, header);

  ParamStore loaded(0);
  const CheckpointHeader back = load_checkpoint(tmp.file("ck.xck"), loaded);
  CHECK(back.seed == 42);
  CHECK_FALSE(back.config_json.empty());
  REQUIRE(loaded.names() == store.names());
  for (const auto& name : store.names()) {
    const Tensor& a = *store.find(name);
    const Tensor& b = *loaded.find(name);
    REQUIRE(a.shape == b.shape);
    for (std::size_t i = 0; i < a.numel(); ++i)
      CHECK(b.data[i] == static_cast<double>(static_cast<float>(a.data[i])));
  }
}

TEST_CASE("feature dump rejects missing tensors") {
  TempDir tmp;
  ParamStore store(0);
  store.zeros("f2d_coarse", {2, 3, 4});
  CheckpointHeader header;
  save_checkpoint(tmp.file("bad.feat"), store, header);
  CHECK_THROWS_AS(load_feature_dump(tmp.file("bad.feat")), IoError);

  FeatureDump dump;
  dump.f2d_coarse = Tensor({2, 3, 4});
  dump.f2d_fine = Tensor({12, 8});
  dump.f3d_coarse = Tensor({5, 2});
  dump.f3d_fine = Tensor({9, 8});
  save_feature_dump(tmp.file("good.feat"), dump);
  const FeatureDump back = load_feature_dump(tmp.file("good.feat"));
  CHECK(back.f2d_coarse.shape == dump.f2d_coarse.shape);
  CHECK(back.f3d_fine.shape == dump.f3d_fine.shape);
}

TEST_CASE("config JSON round trip and dotted overrides") {
  PipelineConfig cfg;
  const std::string dumped = config_to_json(cfg);
  PipelineConfig back = config_from_json(dumped);
  CHECK(back.seed == cfg.seed);
  CHECK(back.camera.fx == cfg.camera.fx);
  CHECK(back.loss.gamma == cfg.loss.gamma);
  CHECK(back.neural.stage_channels == cfg.neural.stage_channels);

  apply_override(back, "ransac.iterations=123");
  CHECK(back.ransac.iterations == 123);
  apply_override(back, "loss.gamma=16.5");
  CHECK(back.loss.gamma == 16.5);
  apply_override(back, "train.optimizer=adam");
  CHECK(back.train.optimizer == "adam");
  apply_override(back, "seed=99");
  CHECK(back.seed == 99);
  CHECK_THROWS_AS(apply_override(back, "nonsense.key=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(back, "no_equals"), ConfigError);

  CHECK_THROWS_AS(config_from_json("{\"typo\": 1}"), ConfigError);
}

TEST_CASE("default config validates") {
  PipelineConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  // Transformer grid must equal the finest pyramid level.
  PipelineConfig bad = cfg;
  bad.patching.transformer_grid_h = 6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
