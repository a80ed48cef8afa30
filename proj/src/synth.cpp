#include "xreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "xreg/groundtruth.hpp"
#include "xreg/io.hpp"
#include "xreg/rng.hpp"

namespace xreg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t hash_coords(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
  std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
  for (std::int64_t v : {x, y, z}) {
    h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 29;
  }
  return h;
}

double lattice01(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
  return static_cast<double>(hash_coords(x, y, z, seed) >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Trilinear value noise in [0,1).
double value_noise(const Vec3& p, std::uint64_t seed) {
  const double fx = std::floor(p.x), fy = std::floor(p.y), fz = std::floor(p.z);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy),
             iz = static_cast<std::int64_t>(fz);
  const double tx = smooth(p.x - fx), ty = smooth(p.y - fy), tz = smooth(p.z - fz);
  double c[2][2][2];
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) c[dx][dy][dz] = lattice01(ix + dx, iy + dy, iz + dz, seed);
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  const double x00 = lerp(c[0][0][0], c[1][0][0], tx);
  const double x10 = lerp(c[0][1][0], c[1][1][0], tx);
  const double x01 = lerp(c[0][0][1], c[1][0][1], tx);
  const double x11 = lerp(c[0][1][1], c[1][1][1], tx);
  const double y0 = lerp(x00, x10, ty);
  const double y1 = lerp(x01, x11, ty);
  return lerp(y0, y1, tz);
}

struct Hit {
  double t = -1.0;
  int prim = -1;
  Vec3 normal;
  bool valid() const { return t > 0.0; }
};

struct Primitive {
  enum Kind { FloorRect, Box, Sphere } kind;
  // FloorRect: center, half extents (x,z), y level (normal -y, facing up toward cameras).
  // Box: min/max corners. Sphere: center + radius.
  Vec3 a, b;
  double radius = 0.0;
  std::uint64_t noise_seed = 0;
  double base_tone = 0.0;

  Hit intersect(const Vec3& origin, const Vec3& dir) const {
    Hit h;
    if (kind == FloorRect) {
      if (std::abs(dir.y) < 1e-12) return h;
      const double t = (a.y - origin.y) / dir.y;
      if (t <= 1e-9) return h;
      const Vec3 p = origin + dir * t;
      if (std::abs(p.x - a.x) > b.x || std::abs(p.z - a.z) > b.z) return h;
      h.t = t;
      h.normal = {0, -1, 0};
      return h;
    }
    if (kind == Box) {
      double tmin = -1e300, tmax = 1e300;
      int axis = -1;
      const double o[3] = {origin.x, origin.y, origin.z};
      const double d[3] = {dir.x, dir.y, dir.z};
      const double lo[3] = {a.x, a.y, a.z};
      const double hi[3] = {b.x, b.y, b.z};
      for (int i = 0; i < 3; ++i) {
        if (std::abs(d[i]) < 1e-12) {
          if (o[i] < lo[i] || o[i] > hi[i]) return h;
          continue;
        }
        double t0 = (lo[i] - o[i]) / d[i];
        double t1 = (hi[i] - o[i]) / d[i];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > tmin) {
          tmin = t0;
          axis = i;
        }
        tmax = std::min(tmax, t1);
      }
      if (tmin > tmax || tmin <= 1e-9) return h;
      h.t = tmin;
      double n[3] = {0, 0, 0};
      n[axis] = d[axis] > 0 ? -1.0 : 1.0;
      h.normal = {n[0], n[1], n[2]};
      return h;
    }
    // Sphere.
    const Vec3 oc = origin - a;
    const double b2 = oc.dot(dir);
    const double c = oc.squared_norm() - radius * radius;
    const double disc = b2 * b2 - dir.squared_norm() * c;
    if (disc < 0) return h;
    const double sq = std::sqrt(disc);
    double t = (-b2 - sq) / dir.squared_norm();
    if (t <= 1e-9) t = (-b2 + sq) / dir.squared_norm();
    if (t <= 1e-9) return h;
    h.t = t;
    h.normal = (origin + dir * t - a).normalized();
    return h;
  }

  double appearance(const Vec3& p, int octaves) const {
    double v = base_tone;
    double amp = 0.6, freq = 3.0;
    for (int o = 0; o < octaves; ++o) {
      v += amp * value_noise(p * freq + Vec3{static_cast<double>(o) * 7.31, 0.17, -3.9}, noise_seed + o);
      amp *= 0.5;
      freq *= 2.0;
    }
    return v;
  }
};

struct Scene {
  std::vector<Primitive> prims;
  Vec3 light;
  int octaves;

  Hit cast(const Vec3& origin, const Vec3& dir) const {
    Hit best;
    for (std::size_t i = 0; i < prims.size(); ++i) {
      Hit h = prims[i].intersect(origin, dir);
      if (h.valid() && (!best.valid() || h.t < best.t)) {
        best = h;
        best.prim = static_cast<int>(i);
      }
    }
    return best;
  }

  double shade(const Hit& h, const Vec3& p) const {
    const double lambert = std::max(0.0, h.normal.dot(light));
    return prims[h.prim].appearance(p, octaves) * (0.7 + 0.3 * lambert);
  }
};

Scene make_scene(const PipelineConfig& cfg) {
  Rng rng(cfg.seed ^ 0x5ce9eULL);
  Scene scene;
  scene.octaves = cfg.synth.noise_octaves;
  scene.light = Vec3{0.4, -0.8, 0.3}.normalized();

  // Table surface: world y points down, the floor sits at y = +0.75 and
  // objects rest above it (smaller y).
  Primitive floor;
  floor.kind = Primitive::FloorRect;
  floor.a = {0.0, 0.75, 0.0};
  floor.b = {2.5, 0.0, 2.5};
  floor.noise_seed = rng.next_u64();
  floor.base_tone = 0.25;
  scene.prims.push_back(floor);

  for (int i = 0; i < cfg.synth.boxes; ++i) {
    Primitive box;
    box.kind = Primitive::Box;
    const Vec3 center{rng.uniform(-0.8, 0.8), 0.0, rng.uniform(-0.8, 0.8)};
    const double sx = rng.uniform(0.1, 0.3), sy = rng.uniform(0.1, 0.45), sz = rng.uniform(0.1, 0.3);
    box.a = {center.x - sx, 0.75 - 2 * sy, center.z - sz};
    box.b = {center.x + sx, 0.75, center.z + sz};
    box.noise_seed = rng.next_u64();
    box.base_tone = 0.15 + 0.5 * rng.uniform();
    scene.prims.push_back(box);
  }
  for (int i = 0; i < cfg.synth.spheres; ++i) {
    Primitive sph;
    sph.kind = Primitive::Sphere;
    const double r = rng.uniform(0.08, 0.22);
    sph.a = {rng.uniform(-0.9, 0.9), 0.75 - r, rng.uniform(-0.9, 0.9)};
    sph.radius = r;
    sph.noise_seed = rng.next_u64();
    sph.base_tone = 0.15 + 0.5 * rng.uniform();
    scene.prims.push_back(sph);
  }
  return scene;
}

RigidTransform look_at(const Vec3& position, const Vec3& target) {
  const Vec3 forward = (target - position).normalized();
  // Camera "down" roughly aligns with world +y.
  const Vec3 right = Vec3{0, 1, 0}.cross(forward).normalized();
  const Vec3 down = forward.cross(right);
  RigidTransform t;  // camera -> world, columns = (right, down, forward)
  t.rotation = {right.x, down.x, forward.x, right.y, down.y, forward.y, right.z, down.z, forward.z};
  t.translation = position;
  return t;
}

}  // namespace

double mean_valid_depth(const DepthMap& d) {
  double sum = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < d.height; ++r)
    for (int c = 0; c < d.width; ++c)
      if (d.valid(r, c)) {
        sum += d.at(r, c);
        ++n;
      }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

std::vector<SceneSample> generate_scene(const PipelineConfig& cfg) {
  cfg.validate();
  const Scene scene = make_scene(cfg);
  const CameraIntrinsics& k = cfg.camera;
  Rng rng(cfg.seed ^ 0x7ca3ULL);

  const int frames = cfg.synth.frames;
  const int window = cfg.synth.fusion_window;
  const int n_windows = frames / window;
  const int near_windows = static_cast<int>(std::lround(n_windows * cfg.synth.near_fraction));

  std::vector<SceneSample> samples;
  samples.reserve(frames);
  for (int f = 0; f < frames; ++f) {
    const int w = std::min(f / window, n_windows - 1);
    const bool near = w < near_windows;
    const double r_lo = near ? cfg.synth.near_radius_min : cfg.synth.far_radius_min;
    const double r_hi = near ? cfg.synth.near_radius_max : cfg.synth.far_radius_max;
    const double radius = rng.uniform(r_lo, r_hi);
    // Smooth azimuth sweep across a shared sector so consecutive windows --
    // and near/far counterparts -- stay overlapped.
    const int regime_frames = near ? near_windows * window : frames - near_windows * window;
    const int local = near ? f : f - near_windows * window;
    const double sweep = cfg.synth.azimuth_span;
    const double azimuth =
        sweep * (static_cast<double>(local) / std::max(1, regime_frames - 1) - 0.5) + rng.uniform(-0.02, 0.02);
    const double elevation = rng.uniform(0.65, 0.85);  // radians above the table

    const Vec3 position{radius * std::cos(elevation) * std::cos(azimuth),
                        0.75 - radius * std::sin(elevation),
                        radius * std::cos(elevation) * std::sin(azimuth)};
    const Vec3 target{rng.uniform(-0.1, 0.1), 0.6 + rng.uniform(-0.05, 0.05), rng.uniform(-0.1, 0.1)};
    const RigidTransform pose = look_at(position, target);

    SceneSample s;
    s.frame_id = f;
    s.near_regime = near;
    s.camera_to_world = pose;
    s.depth = DepthMap(k.height, k.width);
    s.image = Tensor({static_cast<std::size_t>(k.height), static_cast<std::size_t>(k.width)});
    std::size_t valid = 0;
    for (int r = 0; r < k.height; ++r) {
      for (int c = 0; c < k.width; ++c) {
        // Unnormalized camera ray with unit z: the hit parameter is the depth.
        const Vec3 dir_cam{(c - k.cx) / k.fx, (r - k.cy) / k.fy, 1.0};
        const Vec3 dir_world = apply_transform(RigidTransform{pose.rotation, {0, 0, 0}}, dir_cam);
        const Hit h = scene.cast(position, dir_world);
        if (!h.valid()) continue;
        s.depth.at(r, c) = static_cast<float>(h.t);
        s.image.at(r, c) = scene.shade(h, position + dir_world * h.t);
        ++valid;
      }
    }
    if (valid == 0) throw GenerationError("frame " + std::to_string(f) + " sees no geometry");
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<int> Dataset::train_pairs() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (pairs[i].train) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Dataset::test_pairs() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (!pairs[i].train) out.push_back(static_cast<int>(i));
  return out;
}

Dataset build_pairs(const PipelineConfig& cfg, std::vector<SceneSample> frames) {
  if (frames.size() < 2) throw EmptyDataset("build_pairs: need at least two frames");
  Dataset ds;
  ds.config = cfg;
  ds.frames = std::move(frames);

  const int window = cfg.synth.fusion_window;
  const int n_windows = static_cast<int>(ds.frames.size()) / window;
  if (n_windows < 2) throw EmptyDataset("build_pairs: need at least two fusion windows");

  for (int w = 0; w < n_windows; ++w) {
    std::vector<DepthFrame> depth_frames;
    for (int f = w * window; f < (w + 1) * window; ++f)
      depth_frames.push_back({&ds.frames[f].depth, cfg.camera, ds.frames[f].camera_to_world});
    ds.clouds.push_back(fuse_depth_frames(depth_frames, cfg.patching.voxel_fine));
    ds.image_frames.push_back(w * window);
  }

  std::vector<SceneView> views;
  for (int fi : ds.image_frames)
    views.push_back({&ds.frames[fi].depth, cfg.camera, ds.frames[fi].camera_to_world});
  std::vector<const PointCloud*> cloud_ptrs;
  for (const auto& c : ds.clouds) cloud_ptrs.push_back(&c);

  const auto kept = filter_pairs(views, cloud_ptrs, cfg.synth.min_overlap, cfg.thresholds.dist3d);
  if (kept.empty()) throw EmptyDataset("build_pairs: no pair reached the overlap threshold");

  // Deterministic shuffle, then the tail becomes the held-out split.
  std::vector<int> order(kept.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(cfg.seed ^ 0xda7a5e7ULL);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  const std::size_t holdout = std::max<std::size_t>(1, static_cast<std::size_t>(kept.size() * cfg.synth.holdout_fraction));
  std::vector<bool> is_test(kept.size(), false);
  for (std::size_t i = 0; i < holdout && i < order.size(); ++i) is_test[order[i]] = true;

  for (std::size_t i = 0; i < kept.size(); ++i)
    ds.pairs.push_back({kept[i].image_idx, kept[i].cloud_idx, kept[i].overlap, !is_test[i]});
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(fs::path(dir) / "frames");
  fs::create_directories(fs::path(dir) / "clouds");

  {
    std::ofstream out(fs::path(dir) / "config.json");
    out << config_to_json(ds.config) << "\n";
  }
  save_intrinsics_json((fs::path(dir) / "intrinsics.json").string(), ds.config.camera);

  char name[64];
  for (const auto& frame : ds.frames) {
    std::snprintf(name, sizeof(name), "frames/frame_%05d", frame.frame_id);
    const std::string base = (fs::path(dir) / name).string();
    save_image(base + ".image", frame.image);
    save_depth_map(base + ".depth", frame.depth);
    save_transform_json(base + ".pose.json", frame.camera_to_world);
  }
  for (std::size_t i = 0; i < ds.clouds.size(); ++i) {
    std::snprintf(name, sizeof(name), "clouds/cloud_%04zu.pc", i);
    save_point_cloud((fs::path(dir) / name).string(), ds.clouds[i]);
  }

  json pairs = json::array();
  for (const auto& p : ds.pairs)
    pairs.push_back({{"image", p.image}, {"cloud", p.cloud}, {"overlap", p.overlap}, {"split", p.train ? "train" : "test"}});
  json near = json::array();
  for (const auto& f : ds.frames) near.push_back(f.near_regime);
  json j = {{"pairs", pairs},
            {"image_frames", ds.image_frames},
            {"frame_count", ds.frames.size()},
            {"cloud_count", ds.clouds.size()},
            {"near_regime", near}};
  std::ofstream out(fs::path(dir) / "pairs.json");
  out << j.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.config = load_config_file((fs::path(dir) / "config.json").string());

  std::ifstream in(fs::path(dir) / "pairs.json");
  if (!in) throw IoError("cannot read dataset index in " + dir);
  json j = json::parse(in, nullptr, true);

  const std::size_t frame_count = j.at("frame_count");
  const std::size_t cloud_count = j.at("cloud_count");
  char name[64];
  for (std::size_t f = 0; f < frame_count; ++f) {
    std::snprintf(name, sizeof(name), "frames/frame_%05zu", f);
    const std::string base = (fs::path(dir) / name).string();
    SceneSample s;
    s.frame_id = static_cast<int>(f);
    s.image = load_image(base + ".image");
    s.depth = load_depth_map(base + ".depth");
    s.camera_to_world = load_transform_json(base + ".pose.json");
    if (j.contains("near_regime")) s.near_regime = j.at("near_regime").at(f);
    ds.frames.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < cloud_count; ++i) {
    std::snprintf(name, sizeof(name), "clouds/cloud_%04zu.pc", i);
    ds.clouds.push_back(load_point_cloud((fs::path(dir) / name).string()));
  }
  for (const auto& fi : j.at("image_frames")) ds.image_frames.push_back(fi);
  for (const auto& p : j.at("pairs"))
    ds.pairs.push_back({p.at("image"), p.at("cloud"), p.at("overlap"), p.at("split") == "train"});
  return ds;
}

}  // namespace xreg
