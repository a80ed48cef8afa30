#include "xreg/io.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace xreg {
namespace {

using nlohmann::json;

void write_magic(std::ofstream& out, const char* tag) {
  char magic[16] = {0};
  std::memcpy(magic, tag, 8);
  out.write(magic, 16);
}

void expect_magic(std::ifstream& in, const char* tag, const std::string& path) {
  char magic[16] = {0};
  in.read(magic, 16);
  if (!in || std::memcmp(magic, tag, 8) != 0)
    throw IoError(path + ": bad magic, expected " + tag);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  return in;
}

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(path + ": truncated");
  return v;
}

void save_raster(const std::string& path, const char* tag, int h, int w, const std::vector<float>& data) {
  auto out = open_out(path);
  write_magic(out, tag);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(h));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path);
}

std::vector<float> load_raster(const std::string& path, const char* tag, int& h, int& w) {
  auto in = open_in(path);
  expect_magic(in, tag, path);
  h = static_cast<int>(read_pod<std::uint32_t>(in, path));
  w = static_cast<int>(read_pod<std::uint32_t>(in, path));
  std::vector<float> data(static_cast<std::size_t>(h) * w);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!in) throw IoError(path + ": truncated payload");
  return data;
}

}  // namespace

void save_point_cloud(const std::string& path, const PointCloud& pc) {
  auto out = open_out(path);
  write_magic(out, "XREGPC01");
  write_pod<std::uint64_t>(out, pc.size());
  for (const Vec3& p : pc.points) {
    const float xyz[3] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
  if (!out) throw IoError("write failed: " + path);
}

PointCloud load_point_cloud(const std::string& path) {
  auto in = open_in(path);
  expect_magic(in, "XREGPC01", path);
  const auto count = read_pod<std::uint64_t>(in, path);
  PointCloud pc;
  pc.points.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    float xyz[3];
    in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
    if (!in) throw IoError(path + ": truncated payload");
    pc.points.push_back({xyz[0], xyz[1], xyz[2]});
  }
  return pc;
}

void save_depth_map(const std::string& path, const DepthMap& d) {
  save_raster(path, "XREGDP01", d.height, d.width, d.values);
}

DepthMap load_depth_map(const std::string& path) {
  DepthMap d;
  d.values = load_raster(path, "XREGDP01", d.height, d.width);
  return d;
}

void save_image(const std::string& path, const Tensor& image) {
  if (image.ndim() != 2) throw IoError("save_image: expects (H,W)");
  std::vector<float> data(image.numel());
  for (std::size_t i = 0; i < image.numel(); ++i) data[i] = static_cast<float>(image.data[i]);
  save_raster(path, "XREGIM01", static_cast<int>(image.rows()), static_cast<int>(image.cols()), data);
}

Tensor load_image(const std::string& path) {
  int h = 0, w = 0;
  const auto data = load_raster(path, "XREGIM01", h, w);
  Tensor t({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = data[i];
  return t;
}

void save_intrinsics_json(const std::string& path, const CameraIntrinsics& k) {
  json j = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

CameraIntrinsics load_intrinsics_json(const std::string& path) {
  auto in = open_in(path);
  json j = json::parse(in, nullptr, true);
  CameraIntrinsics k{j.at("fx"), j.at("fy"), j.at("cx"), j.at("cy"), j.at("width"), j.at("height")};
  k.validate();
  return k;
}

std::string transform_to_json(const RigidTransform& t) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) {
    json row = json::array();
    for (int c = 0; c < 3; ++c) row.push_back(t.rotation[r * 3 + c]);
    row.push_back(r == 0 ? t.translation.x : (r == 1 ? t.translation.y : t.translation.z));
    rows.push_back(row);
  }
  rows.push_back(json::array({0.0, 0.0, 0.0, 1.0}));
  return json{{"matrix", rows}}.dump(2);
}

void save_transform_json(const std::string& path, const RigidTransform& t) {
  auto out = open_out(path);
  out << transform_to_json(t) << "\n";
}

RigidTransform load_transform_json(const std::string& path) {
  auto in = open_in(path);
  json j = json::parse(in, nullptr, true);
  const auto& m = j.at("matrix");
  RigidTransform t;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t.rotation[r * 3 + c] = m.at(r).at(c);
  }
  t.translation = {m.at(0).at(3), m.at(1).at(3), m.at(2).at(3)};
  t.validate(1e-6);
  return t;
}

void save_correspondences_jsonl(const std::string& path, const std::vector<DenseCorrespondence>& corrs) {
  auto out = open_out(path);
  for (const auto& c : corrs) {
    json j = {{"u", c.pixel.x}, {"v", c.pixel.y}, {"x", c.point.x},
              {"y", c.point.y}, {"z", c.point.z},  {"score", c.score}};
    out << j.dump() << "\n";
  }
}

std::vector<DenseCorrespondence> load_correspondences_jsonl(const std::string& path) {
  auto in = open_in(path);
  std::vector<DenseCorrespondence> corrs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    corrs.push_back({{j.at("u"), j.at("v")}, {j.at("x"), j.at("y"), j.at("z")}, j.at("score")});
  }
  return corrs;
}

void save_checkpoint(const std::string& path, const ParamStore& store, const CheckpointHeader& header) {
  json names = json::array();
  json shapes = json::object();
  for (const auto& name : store.names()) {
    names.push_back(name);
    shapes[name] = store.find(name)->shape;
  }
  json j = {{"names", names}, {"shapes", shapes}, {"seed", header.seed}};
  if (!header.config_json.empty()) j["config"] = json::parse(header.config_json);
  const std::string head = j.dump();

  auto out = open_out(path);
  write_magic(out, "XREGCK01");
  write_pod<std::uint64_t>(out, head.size());
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& name : store.names()) {
    const Tensor& t = *store.find(name);
    std::vector<float> payload(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) payload[i] = static_cast<float>(t.data[i]);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed: " + path);
}

CheckpointHeader load_checkpoint(const std::string& path, ParamStore& store) {
  auto in = open_in(path);
  expect_magic(in, "XREGCK01", path);
  const auto head_len = read_pod<std::uint64_t>(in, path);
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!in) throw IoError(path + ": truncated header");
  json j = json::parse(head);

  CheckpointHeader header;
  header.seed = j.value("seed", 0ULL);
  if (j.contains("config")) header.config_json = j["config"].dump();

  for (const auto& name_json : j.at("names")) {
    const std::string name = name_json;
    std::vector<std::size_t> shape;
    for (const auto& d : j.at("shapes").at(name)) shape.push_back(d);
    Tensor t(shape);
    std::vector<float> payload(t.numel());
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!in) throw IoError(path + ": truncated tensor " + name);
    for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = payload[i];
    store.zeros(name, shape) = std::move(t);
  }
  return header;
}

void save_feature_dump(const std::string& path, const FeatureDump& dump) {
  ParamStore store(0);
  store.zeros("f2d_coarse", dump.f2d_coarse.shape) = dump.f2d_coarse;
  store.zeros("f2d_fine", dump.f2d_fine.shape) = dump.f2d_fine;
  store.zeros("f3d_coarse", dump.f3d_coarse.shape) = dump.f3d_coarse;
  store.zeros("f3d_fine", dump.f3d_fine.shape) = dump.f3d_fine;
  save_checkpoint(path, store, {});
}

FeatureDump load_feature_dump(const std::string& path) {
  ParamStore store(0);
  load_checkpoint(path, store);
  FeatureDump dump;
  for (const char* name : {"f2d_coarse", "f2d_fine", "f3d_coarse", "f3d_fine"})
    if (store.find(name) == nullptr) throw IoError(path + ": feature dump misses " + std::string(name));
  dump.f2d_coarse = *store.find("f2d_coarse");
  dump.f2d_fine = *store.find("f2d_fine");
  dump.f3d_coarse = *store.find("f3d_coarse");
  dump.f3d_fine = *store.find("f3d_fine");
  return dump;
}

}  // namespace xreg
