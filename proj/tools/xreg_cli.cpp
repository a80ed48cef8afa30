// Command-line surface: synthetic dataset generation, training, matching,
// registration and evaluation.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xreg/config.hpp"
#include "xreg/io.hpp"
#include "xreg/pipeline.hpp"
#include "xreg/registration.hpp"
#include "xreg/synth.hpp"
#include "xreg/train.hpp"

namespace fs = std::filesystem;
using namespace xreg;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  int threads = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file");
  cmd->add_option("--set", opts.overrides, "Override a config key, e.g. --set ransac.iterations=100");
  cmd->add_option("--seed", opts.seed, "Override the seed");
  cmd->add_option("--threads", opts.threads, "Worker threads (1 = bitwise reproducible)");
}

PipelineConfig resolve_config(const CommonOpts& opts) {
  PipelineConfig cfg;
  if (!opts.config_path.empty()) cfg = load_config_file(opts.config_path);
  for (const auto& o : opts.overrides) apply_override(cfg, o);
  if (const char* env_seed = std::getenv("XREG_SEED")) cfg.seed = std::strtoull(env_seed, nullptr, 10);
  if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
  if (opts.threads > 0) cfg.threads = opts.threads;
  cfg.validate();
  return cfg;
}

// Dataset configs win over CLI-level defaults but still accept overrides.
PipelineConfig dataset_config(const std::string& data_dir, const CommonOpts& opts) {
  PipelineConfig cfg = load_config_file((fs::path(data_dir) / "config.json").string());
  if (!opts.config_path.empty()) cfg = load_config_file(opts.config_path);
  for (const auto& o : opts.overrides) apply_override(cfg, o);
  if (const char* env_seed = std::getenv("XREG_SEED")) cfg.seed = std::strtoull(env_seed, nullptr, 10);
  if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
  if (opts.threads > 0) cfg.threads = opts.threads;
  cfg.validate();
  return cfg;
}

FeatureFn make_feature_fn(const PipelineConfig& cfg, const Dataset& ds, bool oracle,
                          const std::string& checkpoint, const std::string& feature_dir,
                          std::shared_ptr<ParamStore>& store_out) {
  if (oracle) {
    return [&cfg, &ds](int pair_idx, const PairGeometry& geom) {
      return extract_features_oracle(cfg, ds.image_frame(pair_idx).depth,
                                     ds.image_frame(pair_idx).camera_to_world, ds.pair_cloud(pair_idx), geom);
    };
  }
  if (!feature_dir.empty()) {
    return [&cfg, &ds, feature_dir, &store_out](int pair_idx, const PairGeometry& geom) {
      const std::string path = (fs::path(feature_dir) / ("pair_" + std::to_string(pair_idx) + ".feat")).string();
      const FeatureDump dump = load_feature_dump(path);
      return extract_features_dump(*store_out, cfg, dump, geom.graph, &ds.image_frame(pair_idx).depth);
    };
  }
  store_out = std::make_shared<ParamStore>(cfg.seed);
  if (checkpoint.empty()) throw ConfigError("need --checkpoint, --features or --oracle");
  load_checkpoint(checkpoint, *store_out);
  ensure_pipeline_params(*store_out, cfg);  // fills anything the file lacks
  return [&cfg, &ds, &store_out](int pair_idx, const PairGeometry& geom) {
    return extract_features_toy(*store_out, cfg, ds.image_frame(pair_idx).image, ds.pair_cloud(pair_idx),
                                geom.graph, &ds.image_frame(pair_idx).depth);
  };
}

std::vector<int> select_pairs(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train_pairs();
  if (split == "test") return ds.test_pairs();
  std::vector<int> all(ds.pairs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return all;
}

int run_eval(const std::string& data_dir, const CommonOpts& opts, bool oracle, const std::string& checkpoint,
             const std::string& feature_dir, const std::string& split, const std::string& out_json,
             const std::string& out_csv, const std::string& out_curves) {
  PipelineConfig cfg = dataset_config(data_dir, opts);
  if (oracle) cfg = oracle_eval_config(cfg);
  const Dataset ds = load_dataset(data_dir);
  std::shared_ptr<ParamStore> store;
  const FeatureFn features = make_feature_fn(cfg, ds, oracle, checkpoint, feature_dir, store);
  const auto pair_ids = select_pairs(ds, split);
  if (pair_ids.empty()) throw EmptyDataset("no pairs in the requested split");

  const DatasetEvaluation full = evaluate_dataset_full(cfg, ds, pair_ids, features);
  write_report_json(out_json, full.report);
  if (!out_csv.empty()) write_report_csv(out_csv, full.report);
  if (!out_curves.empty())
    write_report_curves(out_curves, cfg, ds, full.report, full.dense, full.poses, full.registered);
  std::cout << "pairs " << pair_ids.size() << "  IR " << full.report.ir_mean << "  FMR " << full.report.fmr
            << "  RR " << full.report.rr << "  PIR " << full.report.pir_mean << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detection-free coarse-to-fine 2D-3D registration on synthetic RGB-D scenes"};
  app.require_subcommand(1);

  // --- config ---
  auto* cmd_config = app.add_subcommand("config", "Print the effective configuration");
  CommonOpts config_opts;
  add_common(cmd_config, config_opts);
  bool config_dump = false;
  cmd_config->add_flag("--dump", config_dump, "Dump the full config JSON");

  // --- synth ---
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic RGB-D dataset with ground truth");
  CommonOpts synth_opts;
  add_common(cmd_synth, synth_opts);
  std::string synth_out;
  cmd_synth->add_option("--out", synth_out, "Output dataset directory")->required();

  // --- train ---
  auto* cmd_train = app.add_subcommand("train", "Train the toy feature extractor on a dataset");
  CommonOpts train_opts;
  add_common(cmd_train, train_opts);
  std::string train_data, train_out, train_log;
  cmd_train->add_option("--data", train_data, "Dataset directory")->required();
  cmd_train->add_option("--out", train_out, "Checkpoint output path")->required();
  cmd_train->add_option("--log", train_log, "Training log (JSON lines)");
  int train_epochs = -1;
  double train_lr = -1.0;
  cmd_train->add_option("--epochs", train_epochs, "Override train.epochs");
  cmd_train->add_option("--lr", train_lr, "Override train.lr");

  // --- match ---
  auto* cmd_match = app.add_subcommand("match", "Extract dense correspondences for one pair");
  CommonOpts match_opts;
  add_common(cmd_match, match_opts);
  std::string match_data, match_ck, match_features, match_out, match_labels;
  int match_pair_idx = 0;
  bool match_oracle = false;
  cmd_match->add_option("--data", match_data, "Dataset directory")->required();
  cmd_match->add_option("--pair", match_pair_idx, "Pair index")->required();
  cmd_match->add_option("--checkpoint", match_ck, "Trained checkpoint");
  cmd_match->add_option("--features", match_features, "Directory of precomputed feature dumps");
  cmd_match->add_flag("--oracle", match_oracle, "Use ground-truth oracle features");
  cmd_match->add_option("--out", match_out, "Correspondence JSONL output")->required();
  cmd_match->add_option("--labels", match_labels, "Also export coarse labels as JSON");

  // --- register ---
  auto* cmd_register = app.add_subcommand("register", "Estimate a pose from a correspondence file");
  CommonOpts reg_opts;
  add_common(cmd_register, reg_opts);
  std::string reg_corrs, reg_intrinsics, reg_out, reg_gt;
  cmd_register->add_option("corrs", reg_corrs, "Correspondence JSONL file")->required();
  cmd_register->add_option("--intrinsics", reg_intrinsics, "Camera intrinsics JSON")->required();
  cmd_register->add_option("--out", reg_out, "Pose output JSON")->required();
  cmd_register->add_option("--gt-pose", reg_gt, "Optional ground-truth pose for an RMSE report");

  // --- eval / oracle-eval ---
  auto* cmd_eval = app.add_subcommand("eval", "Match, register and score a dataset split");
  CommonOpts eval_opts;
  add_common(cmd_eval, eval_opts);
  std::string eval_data, eval_ck, eval_features, eval_json = "report.json", eval_csv, eval_curves, eval_split = "test";
  bool eval_oracle = false;
  cmd_eval->add_option("--data", eval_data, "Dataset directory")->required();
  cmd_eval->add_option("--checkpoint", eval_ck, "Trained checkpoint");
  cmd_eval->add_option("--features", eval_features, "Directory of precomputed feature dumps");
  cmd_eval->add_flag("--oracle", eval_oracle, "Use ground-truth oracle features");
  cmd_eval->add_option("--split", eval_split, "Pairs to evaluate: train, test or all");
  cmd_eval->add_option("--out", eval_json, "Report JSON path");
  cmd_eval->add_option("--csv", eval_csv, "Report CSV path");
  cmd_eval->add_option("--curves", eval_curves, "Threshold-sweep CSV path");

  auto* cmd_oracle = app.add_subcommand("oracle-eval", "Evaluate with ground-truth oracle features");
  CommonOpts oracle_opts;
  add_common(cmd_oracle, oracle_opts);
  std::string ora_data, ora_json = "report.json", ora_csv, ora_curves, ora_split = "all";
  cmd_oracle->add_option("--data", ora_data, "Dataset directory")->required();
  cmd_oracle->add_option("--split", ora_split, "Pairs to evaluate: train, test or all");
  cmd_oracle->add_option("--out", ora_json, "Report JSON path");
  cmd_oracle->add_option("--csv", ora_csv, "Report CSV path");
  cmd_oracle->add_option("--curves", ora_curves, "Threshold-sweep CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0 through CLI11's own path.
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (cmd_config->parsed()) {
      const PipelineConfig cfg = resolve_config(config_opts);
      if (config_dump) std::cout << config_to_json(cfg) << "\n";
      return 0;
    }

    if (cmd_synth->parsed()) {
      const PipelineConfig cfg = resolve_config(synth_opts);
      const Dataset ds = build_pairs(cfg, generate_scene(cfg));
      save_dataset(synth_out, ds);
      std::cout << "frames " << ds.frames.size() << "  clouds " << ds.clouds.size() << "  pairs "
                << ds.pairs.size() << " (train " << ds.train_pairs().size() << ", test "
                << ds.test_pairs().size() << ")\n";
      return 0;
    }

    if (cmd_train->parsed()) {
      PipelineConfig cfg = dataset_config(train_data, train_opts);
      if (train_epochs >= 0) cfg.train.epochs = train_epochs;
      if (train_lr > 0) cfg.train.lr = train_lr;
      const Dataset ds = load_dataset(train_data);
      ParamStore store(cfg.seed);
      const TrainResult result = train_toy(ds, store, cfg, train_log);
      CheckpointHeader header;
      header.seed = cfg.seed;
      header.config_json = config_to_json(cfg);
      save_checkpoint(train_out, store, header);
      std::cout << "steps " << result.steps;
      if (!result.log.empty())
        std::cout << "  loss " << result.log.front().total << " -> " << result.log.back().total;
      std::cout << "\n";
      return 0;
    }

    if (cmd_match->parsed()) {
      PipelineConfig cfg = dataset_config(match_data, match_opts);
      if (match_oracle) cfg = oracle_eval_config(cfg);
      const Dataset ds = load_dataset(match_data);
      if (match_pair_idx < 0 || match_pair_idx >= static_cast<int>(ds.pairs.size()))
        throw ConfigError("pair index out of range");
      std::shared_ptr<ParamStore> store;
      const FeatureFn features = make_feature_fn(cfg, ds, match_oracle, match_ck, match_features, store);
      const PairGeometry geom = make_pair_geometry(cfg, ds.pair_cloud(match_pair_idx));
      const PairFeatures f = features(match_pair_idx, geom);
      const PairMatches matches = match_pair(cfg, f, geom, ds.pair_cloud(match_pair_idx));
      save_correspondences_jsonl(match_out, matches.dense);
      if (!match_labels.empty()) {
        OverlapContext ctx(ds.image_frame(match_pair_idx).depth, cfg.camera, ds.gt_transform(match_pair_idx),
                           ds.pair_cloud(match_pair_idx), cfg.thresholds);
        const PairLabelTable table = compute_pair_labels(ctx, geom.pyramid, geom.graph);
        nlohmann::json arr = nlohmann::json::array();
        for (int l = 0; l < geom.pyramid.level_count(); ++l) {
          for (const auto& [key, label] : table.coarse[l]) {
            arr.push_back({{"level", l},
                           {"i", static_cast<int>(key / table.node_count)},
                           {"j", static_cast<int>(key % table.node_count)},
                           {"o2d", label.overlap_2d},
                           {"o3d", label.overlap_3d},
                           {"label", label.label == PairLabel::Positive   ? "positive"
                                     : label.label == PairLabel::Negative ? "negative"
                                                                          : "ignore"}});
          }
        }
        std::ofstream out(match_labels);
        out << arr.dump(2) << "\n";
      }
      std::cout << "coarse " << matches.coarse.size() << "  dense " << matches.dense.size() << "\n";
      return 0;
    }

    if (cmd_register->parsed()) {
      const PipelineConfig cfg = resolve_config(reg_opts);
      const CameraIntrinsics k = load_intrinsics_json(reg_intrinsics);
      const auto dense = load_correspondences_jsonl(reg_corrs);
      std::vector<Correspondence2D3D> corrs;
      corrs.reserve(dense.size());
      for (const auto& m : dense) corrs.push_back({m.point, m.pixel});
      RansacConfig rcfg = cfg.ransac;
      rcfg.seed = cfg.seed;
      rcfg.threads = cfg.threads;
      const RegistrationResult result = pnp_ransac(corrs, k, rcfg);

      nlohmann::json j = nlohmann::json::parse(transform_to_json(result.transform));
      j["inliers"] = result.inlier_count;
      j["mean_inlier_error_px"] = result.mean_inlier_error;
      nlohmann::json mask = nlohmann::json::array();
      for (auto m : result.inlier_mask) mask.push_back(static_cast<int>(m));
      j["inlier_mask"] = mask;
      if (!reg_gt.empty()) {
        const RigidTransform gt = load_transform_json(reg_gt);
        PointCloud pts;
        for (const auto& c : corrs) pts.points.push_back(c.point);
        j["rmse_vs_gt"] = rmse(pts, result.transform, gt);
      }
      std::ofstream out(reg_out);
      if (!out) throw IoError("cannot write " + reg_out);
      out << j.dump(2) << "\n";
      std::cout << "inliers " << result.inlier_count << "/" << corrs.size() << "  mean error "
                << result.mean_inlier_error << " px\n";
      return 0;
    }

    if (cmd_eval->parsed())
      return run_eval(eval_data, eval_opts, eval_oracle, eval_ck, eval_features, eval_split, eval_json,
                      eval_csv, eval_curves);
    if (cmd_oracle->parsed())
      return run_eval(ora_data, oracle_opts, true, "", "", ora_split, ora_json, ora_csv, ora_curves);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
