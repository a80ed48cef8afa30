#include "xreg/config.hpp"

#include <fstream>

#include <json.hpp>

#include "xreg/patching.hpp"

namespace xreg {

using nlohmann::json;

void PipelineConfig::validate() const {
  camera.validate();
  thresholds.validate();
  loss.validate();
  ransac.validate();
  if (camera.height % 8 != 0 || camera.width % 8 != 0)
    throw ConfigError("camera: resolution must be divisible by 8 for the coarse stack");
  if (patching.coarse_grid_h != camera.height / 8 || patching.coarse_grid_w != camera.width / 8)
    throw ConfigError("patching: coarse grid must equal image/8");
  const int finest_h = patching.pyramid_base_h << (patching.pyramid_levels - 1);
  const int finest_w = patching.pyramid_base_w << (patching.pyramid_levels - 1);
  if (camera.height % finest_h != 0 || camera.width % finest_w != 0)
    throw ConfigError("patching: finest pyramid grid must divide the image");
  if (finest_h != patching.transformer_grid_h || finest_w != patching.transformer_grid_w)
    throw ConfigError("patching: transformer grid must equal the finest pyramid level");
  if ((camera.height / finest_h) % 2 != 0 || (camera.width / finest_w) % 2 != 0)
    throw ConfigError("patching: finest patch size must be even for exact 1/4 sampling");
  if (neural.width % static_cast<std::size_t>(neural.heads) != 0)
    throw ConfigError("neural: width must divide by head count");
  if (synth.fusion_window < 1 || synth.frames < 2 * synth.fusion_window)
    throw ConfigError("synth: need at least two fusion windows");
  if (!(synth.holdout_fraction > 0.0 && synth.holdout_fraction < 1.0))
    throw ConfigError("synth: holdout fraction must be in (0,1)");
}

ToyExtractorConfig PipelineConfig::toy_config() const {
  ToyExtractorConfig t;
  t.image_h = camera.height;
  t.image_w = camera.width;
  t.coarse_grid_h = patching.coarse_grid_h;
  t.coarse_grid_w = patching.coarse_grid_w;
  t.stem_channels = neural.stem_channels;
  t.texture_channels = neural.texture_channels;
  t.stage_channels = neural.stage_channels;
  t.coarse_width = neural.width;
  t.fine_width = neural.fine_width;
  t.point_fourier_len = neural.fourier_len_3d;
  t.point_hidden = neural.point_hidden;
  return t;
}

RefineConfig PipelineConfig::refine_config() const {
  RefineConfig r;
  r.rounds = neural.rounds;
  r.attention = {neural.width, neural.heads};
  return r;
}

PatchPyramid PipelineConfig::make_pyramid() const {
  return build_pyramid(camera.height, camera.width, patching.pyramid_base_h, patching.pyramid_base_w,
                       patching.pyramid_levels);
}

namespace {

json to_json_obj(const PipelineConfig& c) {
  return json{
      {"seed", c.seed},
      {"threads", c.threads},
      {"camera",
       {{"fx", c.camera.fx},
        {"fy", c.camera.fy},
        {"cx", c.camera.cx},
        {"cy", c.camera.cy},
        {"width", c.camera.width},
        {"height", c.camera.height}}},
      {"synth",
       {{"frames", c.synth.frames},
        {"fusion_window", c.synth.fusion_window},
        {"azimuth_span", c.synth.azimuth_span},
        {"near_radius_min", c.synth.near_radius_min},
        {"near_radius_max", c.synth.near_radius_max},
        {"far_radius_min", c.synth.far_radius_min},
        {"far_radius_max", c.synth.far_radius_max},
        {"near_fraction", c.synth.near_fraction},
        {"boxes", c.synth.boxes},
        {"spheres", c.synth.spheres},
        {"noise_octaves", c.synth.noise_octaves},
        {"min_overlap", c.synth.min_overlap},
        {"target_mean_depth_near", c.synth.target_mean_depth_near},
        {"target_mean_depth_far", c.synth.target_mean_depth_far},
        {"holdout_fraction", c.synth.holdout_fraction}}},
      {"patching",
       {{"coarse_grid_h", c.patching.coarse_grid_h},
        {"coarse_grid_w", c.patching.coarse_grid_w},
        {"pyramid_base_h", c.patching.pyramid_base_h},
        {"pyramid_base_w", c.patching.pyramid_base_w},
        {"pyramid_levels", c.patching.pyramid_levels},
        {"transformer_grid_h", c.patching.transformer_grid_h},
        {"transformer_grid_w", c.patching.transformer_grid_w},
        {"voxel_fine", c.patching.voxel_fine},
        {"voxel_node", c.patching.voxel_node},
        {"min_node_members", c.patching.min_node_members}}},
      {"neural",
       {{"width", c.neural.width},
        {"heads", c.neural.heads},
        {"rounds", c.neural.rounds},
        {"fine_width", c.neural.fine_width},
        {"fourier_len_2d", c.neural.fourier_len_2d},
        {"fourier_len_3d", c.neural.fourier_len_3d},
        {"stem_channels", c.neural.stem_channels},
        {"texture_channels", c.neural.texture_channels},
        {"stage_channels", c.neural.stage_channels},
        {"point_hidden", c.neural.point_hidden}}},
      {"matching",
       {{"coarse_k", c.matching.coarse_k},
        {"fine_k", c.matching.fine_k},
        {"max_coarse", c.matching.max_coarse},
        {"min_score", c.matching.min_score},
        {"fine_min_score", c.matching.fine_min_score}}},
      {"loss",
       {{"gamma", c.loss.gamma},
        {"delta_p", c.loss.delta_p},
        {"delta_n", c.loss.delta_n},
        {"lambda_fine", c.loss.lambda_fine}}},
      {"thresholds",
       {{"dist3d", c.thresholds.dist3d},
        {"dist2d", c.thresholds.dist2d},
        {"patch_pos", c.thresholds.patch_pos},
        {"patch_neg", c.thresholds.patch_neg},
        {"fine_pos3d", c.thresholds.fine_pos3d},
        {"fine_pos2d", c.thresholds.fine_pos2d},
        {"fine_neg3d", c.thresholds.fine_neg3d},
        {"fine_neg2d", c.thresholds.fine_neg2d}}},
      {"ransac",
       {{"iterations", c.ransac.iterations},
        {"inlier_tol", c.ransac.inlier_tol},
        {"sample_size", c.ransac.sample_size}}},
      {"metrics",
       {{"tau1", c.metrics.tau1},
        {"tau2", c.metrics.tau2},
        {"tau3", c.metrics.tau3},
        {"pir_tau", c.metrics.pir_tau}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"lr", c.train.lr},
        {"decay", c.train.decay},
        {"fine_samples", c.train.fine_samples},
        {"optimizer", c.train.optimizer}}},
      {"oracle",
       {{"coarse_dim", c.oracle.coarse_dim},
        {"coarse_sigma", c.oracle.coarse_sigma},
        {"fine_homogeneous", c.oracle.fine_homogeneous},
        {"min_score", c.oracle.min_score},
        {"coarse_k", c.oracle.coarse_k},
        {"fine_k", c.oracle.fine_k},
        {"size_weight", c.oracle.size_weight},
        {"min_node_members", c.oracle.min_node_members},
        {"fine_gate", c.oracle.fine_gate}}},
  };
}

template <typename T>
void pull(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_known(const json& j, const std::vector<std::string>& known, const std::string& scope) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : known)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError("unknown config key: " + scope + it.key());
  }
}

void from_json_obj(const json& j, PipelineConfig& c) {
  check_known(j, {"seed", "threads", "camera", "synth", "patching", "neural", "matching", "loss",
                  "thresholds", "ransac", "metrics", "train", "oracle"},
              "");
  pull(j, "seed", c.seed);
  pull(j, "threads", c.threads);
  if (j.contains("camera")) {
    const auto& s = j.at("camera");
    check_known(s, {"fx", "fy", "cx", "cy", "width", "height"}, "camera.");
    pull(s, "fx", c.camera.fx);
    pull(s, "fy", c.camera.fy);
    pull(s, "cx", c.camera.cx);
    pull(s, "cy", c.camera.cy);
    pull(s, "width", c.camera.width);
    pull(s, "height", c.camera.height);
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    check_known(s,
                {"frames", "fusion_window", "azimuth_span", "near_radius_min", "near_radius_max", "far_radius_min",
                 "far_radius_max", "near_fraction", "boxes", "spheres", "noise_octaves", "min_overlap",
                 "target_mean_depth_near", "target_mean_depth_far", "holdout_fraction"},
                "synth.");
    pull(s, "frames", c.synth.frames);
    pull(s, "fusion_window", c.synth.fusion_window);
    pull(s, "azimuth_span", c.synth.azimuth_span);
    pull(s, "near_radius_min", c.synth.near_radius_min);
    pull(s, "near_radius_max", c.synth.near_radius_max);
    pull(s, "far_radius_min", c.synth.far_radius_min);
    pull(s, "far_radius_max", c.synth.far_radius_max);
    pull(s, "near_fraction", c.synth.near_fraction);
    pull(s, "boxes", c.synth.boxes);
    pull(s, "spheres", c.synth.spheres);
    pull(s, "noise_octaves", c.synth.noise_octaves);
    pull(s, "min_overlap", c.synth.min_overlap);
    pull(s, "target_mean_depth_near", c.synth.target_mean_depth_near);
    pull(s, "target_mean_depth_far", c.synth.target_mean_depth_far);
    pull(s, "holdout_fraction", c.synth.holdout_fraction);
  }
  if (j.contains("patching")) {
    const auto& s = j.at("patching");
    check_known(s,
                {"coarse_grid_h", "coarse_grid_w", "pyramid_base_h", "pyramid_base_w", "pyramid_levels",
                 "transformer_grid_h", "transformer_grid_w", "voxel_fine", "voxel_node", "min_node_members"},
                "patching.");
    pull(s, "coarse_grid_h", c.patching.coarse_grid_h);
    pull(s, "coarse_grid_w", c.patching.coarse_grid_w);
    pull(s, "pyramid_base_h", c.patching.pyramid_base_h);
    pull(s, "pyramid_base_w", c.patching.pyramid_base_w);
    pull(s, "pyramid_levels", c.patching.pyramid_levels);
    pull(s, "transformer_grid_h", c.patching.transformer_grid_h);
    pull(s, "transformer_grid_w", c.patching.transformer_grid_w);
    pull(s, "voxel_fine", c.patching.voxel_fine);
    pull(s, "voxel_node", c.patching.voxel_node);
    pull(s, "min_node_members", c.patching.min_node_members);
  }
  if (j.contains("neural")) {
    const auto& s = j.at("neural");
    check_known(s,
                {"width", "heads", "rounds", "fine_width", "fourier_len_2d", "fourier_len_3d",
                 "stem_channels", "texture_channels", "stage_channels", "point_hidden"},
                "neural.");
    pull(s, "width", c.neural.width);
    pull(s, "heads", c.neural.heads);
    pull(s, "rounds", c.neural.rounds);
    pull(s, "fine_width", c.neural.fine_width);
    pull(s, "fourier_len_2d", c.neural.fourier_len_2d);
    pull(s, "fourier_len_3d", c.neural.fourier_len_3d);
    pull(s, "stem_channels", c.neural.stem_channels);
    pull(s, "texture_channels", c.neural.texture_channels);
    pull(s, "stage_channels", c.neural.stage_channels);
    pull(s, "point_hidden", c.neural.point_hidden);
  }
  if (j.contains("matching")) {
    const auto& s = j.at("matching");
    check_known(s, {"coarse_k", "fine_k", "max_coarse", "min_score", "fine_min_score"}, "matching.");
    pull(s, "coarse_k", c.matching.coarse_k);
    pull(s, "fine_k", c.matching.fine_k);
    pull(s, "max_coarse", c.matching.max_coarse);
    pull(s, "min_score", c.matching.min_score);
    pull(s, "fine_min_score", c.matching.fine_min_score);
  }
  if (j.contains("loss")) {
    const auto& s = j.at("loss");
    check_known(s, {"gamma", "delta_p", "delta_n", "lambda_fine"}, "loss.");
    pull(s, "gamma", c.loss.gamma);
    pull(s, "delta_p", c.loss.delta_p);
    pull(s, "delta_n", c.loss.delta_n);
    pull(s, "lambda_fine", c.loss.lambda_fine);
  }
  if (j.contains("thresholds")) {
    const auto& s = j.at("thresholds");
    check_known(s,
                {"dist3d", "dist2d", "patch_pos", "patch_neg", "fine_pos3d", "fine_pos2d", "fine_neg3d",
                 "fine_neg2d"},
                "thresholds.");
    pull(s, "dist3d", c.thresholds.dist3d);
    pull(s, "dist2d", c.thresholds.dist2d);
    pull(s, "patch_pos", c.thresholds.patch_pos);
    pull(s, "patch_neg", c.thresholds.patch_neg);
    pull(s, "fine_pos3d", c.thresholds.fine_pos3d);
    pull(s, "fine_pos2d", c.thresholds.fine_pos2d);
    pull(s, "fine_neg3d", c.thresholds.fine_neg3d);
    pull(s, "fine_neg2d", c.thresholds.fine_neg2d);
  }
  if (j.contains("ransac")) {
    const auto& s = j.at("ransac");
    check_known(s, {"iterations", "inlier_tol", "sample_size"}, "ransac.");
    pull(s, "iterations", c.ransac.iterations);
    pull(s, "inlier_tol", c.ransac.inlier_tol);
    pull(s, "sample_size", c.ransac.sample_size);
  }
  if (j.contains("metrics")) {
    const auto& s = j.at("metrics");
    check_known(s, {"tau1", "tau2", "tau3", "pir_tau"}, "metrics.");
    pull(s, "tau1", c.metrics.tau1);
    pull(s, "tau2", c.metrics.tau2);
    pull(s, "tau3", c.metrics.tau3);
    pull(s, "pir_tau", c.metrics.pir_tau);
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    check_known(s, {"epochs", "lr", "decay", "fine_samples", "optimizer"}, "train.");
    pull(s, "epochs", c.train.epochs);
    pull(s, "lr", c.train.lr);
    pull(s, "decay", c.train.decay);
    pull(s, "fine_samples", c.train.fine_samples);
    pull(s, "optimizer", c.train.optimizer);
  }
  if (j.contains("oracle")) {
    const auto& s = j.at("oracle");
    check_known(s,
                {"coarse_dim", "coarse_sigma", "fine_homogeneous", "min_score", "coarse_k", "fine_k",
                 "size_weight", "min_node_members", "fine_gate"},
                "oracle.");
    pull(s, "coarse_dim", c.oracle.coarse_dim);
    pull(s, "coarse_sigma", c.oracle.coarse_sigma);
    pull(s, "fine_homogeneous", c.oracle.fine_homogeneous);
    pull(s, "min_score", c.oracle.min_score);
    pull(s, "coarse_k", c.oracle.coarse_k);
    pull(s, "fine_k", c.oracle.fine_k);
    pull(s, "size_weight", c.oracle.size_weight);
    pull(s, "min_node_members", c.oracle.min_node_members);
    pull(s, "fine_gate", c.oracle.fine_gate);
  }
}

}  // namespace

std::string config_to_json(const PipelineConfig& cfg) { return to_json_obj(cfg).dump(2); }

PipelineConfig config_from_json(const std::string& text) {
  PipelineConfig cfg;
  from_json_obj(json::parse(text), cfg);
  return cfg;
}

PipelineConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  PipelineConfig cfg;
  from_json_obj(json::parse(in, nullptr, true), cfg);
  return cfg;
}

void apply_override(PipelineConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like section.key=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  // Rebuild the JSON, patch the dotted path, parse back (keeps one source of
  // truth for key names and types).
  json j = json::parse(config_to_json(cfg));
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->contains(key)) throw ConfigError("unknown config key: " + path);
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json parsed_value;
  try {
    parsed_value = json::parse(value);
  } catch (const json::exception&) {
    parsed_value = value;  // bare strings (e.g. optimizer=adam)
  }
  if (node->is_string() && !parsed_value.is_string()) parsed_value = value;
  *node = parsed_value;
  PipelineConfig out;
  from_json_obj(j, out);
  cfg = out;
}

}  // namespace xreg
