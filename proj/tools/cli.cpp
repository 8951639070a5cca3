#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "flowgs/config.hpp"
#include "flowgs/image_io.hpp"
#include "flowgs/parallel.hpp"
#include "flowgs/pipeline.hpp"
#include "flowgs/rasterizer.hpp"

namespace flowgs::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr int kSchemaVersion = 1;

struct ConfigFlags {
  std::string path;
  std::vector<std::string> overrides;
  std::optional<int> iters_pose;
  std::optional<int> threads;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.path, "JSON run configuration; omitted keys keep defaults");
  cmd->add_option("--set", flags.overrides,
                  "Override one config key, e.g. --set loss.lambda_flow=0 (repeatable)");
  cmd->add_option("--iters-pose", flags.iters_pose, "Pose iterations per frame (iters.pose)");
  cmd->add_option("--threads", flags.threads, "Worker threads; 0 uses every core");
}

/// Defaults, then the config file, then --set in order, then dedicated flags.
RunConfig resolve(const ConfigFlags& flags) {
  RunConfig c = flags.path.empty() ? RunConfig{} : load_run_config(flags.path);
  for (const std::string& o : flags.overrides) apply_override(c, o);
  if (flags.iters_pose) apply_override(c, "iters.pose=" + std::to_string(*flags.iters_pose));
  if (flags.threads) apply_override(c, "threads=" + std::to_string(*flags.threads));
  set_thread_count(c.threads);
  return c;
}

json config_json(const RunConfig& c) { return json::parse(to_json(c)); }

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  os << j.dump(2) << "\n";
}

std::string frame_name(size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu%s", i, ext);
  return buf;
}

void prepare_output(const fs::path& out, const std::vector<fs::path>& inputs) {
  for (const fs::path& in : inputs) {
    if (fs::exists(out) && fs::exists(in) && fs::equivalent(out, in)) {
      throw Error(ErrorCode::InvalidArgument,
                  "output directory " + out.string() + " is an input; pick another");
    }
  }
  fs::create_directories(out);
  fs::remove(out / "error.json");
}

json nvs_json(const NvsMetrics& m) {
  json frames = json::array();
  for (const NvsFrameMetrics& f : m.frames) {
    frames.push_back({{"index", f.index}, {"psnr", f.psnr}, {"ssim", f.ssim}});
  }
  return {{"mean_psnr", m.mean_psnr}, {"mean_ssim", m.mean_ssim}, {"frames", frames}};
}

/// Trajectory error over the train frames that have both an estimate and
/// ground truth.
std::optional<json> trajectory_json(const std::vector<FrameRecord>& frames,
                                    const std::vector<PoseSE3>& gt) {
  if (gt.empty()) return std::nullopt;
  std::vector<PoseSE3> est, ref;
  for (size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].role != FrameRole::Train || !frames[i].estimated_pose) continue;
    est.push_back(*frames[i].estimated_pose);
    ref.push_back(gt[i]);
  }
  if (est.size() < 2) return std::nullopt;
  const TrajectoryMetrics t = evaluate_trajectory(est, ref);
  const double extent = trajectory_extent(ref);
  return json{{"frames", est.size()}, {"ate", t.ate},
              {"rpe_t", t.rpe_t},     {"rpe_r_deg", t.rpe_r},
              {"scale", t.scale},     {"extent", extent},
              {"ate_over_extent", extent > 0.0 ? t.ate / extent : 0.0}};
}

std::vector<FrameRecord> of_role(const std::vector<FrameRecord>& frames, FrameRole role) {
  std::vector<FrameRecord> out;
  for (const FrameRecord& f : frames) {
    if (f.role == role) out.push_back(f);
  }
  return out;
}

json frame_lists(const std::vector<FrameRecord>& frames) {
  json train = json::array(), test = json::array();
  for (const FrameRecord& f : frames) (f.role == FrameRole::Train ? train : test).push_back(f.index);
  return {{"train", train}, {"test", test}};
}

void cmd_reconstruct(const fs::path& input, const fs::path& out, const ConfigFlags& flags) {
  const RunConfig c = resolve(flags);
  Dataset ds = load_dataset(input, c.pipeline.test_every);
  prepare_output(out, {input});
  auto log = [](const std::string& line) { std::cerr << "flowgs: " << line << "\n"; };
  const ReconstructionResult r = reconstruct(ds.frames, ds.k, c.pipeline, log);
  estimate_test_poses(ds.frames, r.cloud, ds.k, c.pipeline);

  std::vector<PoseSE3> poses;
  for (const FrameRecord& f : ds.frames) poses.push_back(*f.estimated_pose);
  save_scene(out / "scene.bin", r.raw_cloud);
  write_poses(out / "trajectory.txt", poses);

  json metrics = {{"schema_version", kSchemaVersion}, {"command", "reconstruct"},
                  {"gaussians", r.cloud.size()}};
  if (auto t = trajectory_json(ds.frames, ds.gt_poses)) metrics["trajectory"] = *t;
  const std::vector<FrameRecord> test = of_role(ds.frames, FrameRole::Test);
  if (!test.empty()) metrics["nvs_test"] = nvs_json(evaluate_nvs(r.cloud, test, ds.k));
  json diag = json::array();
  for (const FrameDiagnostics& d : r.diagnostics) {
    diag.push_back({{"index", d.index},
                    {"initial_objective", d.initial_objective},
                    {"best_objective", d.best_objective},
                    {"best_iteration", d.best_iteration},
                    {"flow_pixels", d.flow_pixels},
                    {"masked_out", d.masked_out},
                    {"gaussians", d.gaussians}});
  }
  metrics["frames"] = diag;
  write_json(out / "metrics.json", metrics);

  json meta = {{"schema_version", kSchemaVersion},
               {"command", "reconstruct"},
               {"input", input.string()},
               {"threads", thread_count()},
               {"config", config_json(c)},
               {"frames", frame_lists(ds.frames)},
               {"events", r.events}};
  write_json(out / "metadata.json", meta);
}

void cmd_render(const fs::path& scene, const fs::path& poses_path, const fs::path& intrinsics,
                const fs::path& out, std::optional<int> threads) {
  if (threads) set_thread_count(*threads);
  const GaussianCloud cloud = load_scene(scene);
  const std::vector<PoseSE3> poses = read_poses(poses_path);
  const CameraIntrinsics k = read_intrinsics(intrinsics);
  prepare_output(out, {scene.parent_path(), poses_path.parent_path()});
  for (size_t i = 0; i < poses.size(); ++i) {
    const RenderOutput r = render(cloud, poses[i], k);
    write_png(out / frame_name(i, ".png"), r.color);
    write_pfm(out / frame_name(i, ".pfm"), expected_depth(r));
  }
  std::cerr << "flowgs: rendered " << poses.size() << " views to " << out.string() << "\n";
}

void cmd_evaluate(const fs::path& scene, const fs::path& dataset, std::string trajectory,
                  const std::string& out, bool all_frames, const ConfigFlags& flags) {
  const RunConfig c = resolve(flags);
  const GaussianCloud cloud = load_scene(scene);
  Dataset ds = load_dataset(dataset, c.pipeline.test_every);
  if (trajectory.empty() && fs::exists(scene.parent_path() / "trajectory.txt")) {
    trajectory = (scene.parent_path() / "trajectory.txt").string();
  }
  std::vector<PoseSE3> poses;
  if (!trajectory.empty()) {
    poses = read_poses(trajectory);
  } else if (!ds.gt_poses.empty()) {
    poses = ds.gt_poses;
  } else {
    throw Error(ErrorCode::InvalidArgument,
                "no poses to render from: pass --trajectory or add gt_poses.txt to " +
                    dataset.string());
  }
  if (poses.size() != ds.frames.size()) {
    throw Error(ErrorCode::LengthMismatch, "trajectory has " + std::to_string(poses.size()) +
                                               " poses for " + std::to_string(ds.frames.size()) +
                                               " frames");
  }
  for (size_t i = 0; i < poses.size(); ++i) ds.frames[i].estimated_pose = poses[i];

  json metrics = {{"schema_version", kSchemaVersion}, {"command", "evaluate"},
                  {"gaussians", cloud.size()}, {"poses", trajectory.empty() ? "gt" : trajectory}};
  if (!trajectory.empty()) {
    if (auto t = trajectory_json(ds.frames, ds.gt_poses)) metrics["trajectory"] = *t;
  }
  std::vector<FrameRecord> eval = all_frames ? ds.frames : of_role(ds.frames, FrameRole::Test);
  if (eval.empty()) eval = ds.frames;
  metrics[all_frames ? "nvs_all" : "nvs_test"] = nvs_json(evaluate_nvs(cloud, eval, ds.k));
  if (!out.empty()) {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    write_json(out, metrics);
  }
  std::cout << metrics.dump(2) << "\n";
}

void cmd_synth(const fs::path& out, const ConfigFlags& flags) {
  const RunConfig c = resolve(flags);
  const SyntheticDataset data = generate_synthetic(c.synth);
  prepare_output(out, {});
  write_dataset(out, data);
  save_scene(out / "gt_scene.bin", data.gt_cloud);
  json meta = {{"schema_version", kSchemaVersion},
               {"command", "synth"},
               {"config", config_json(c)},
               {"frames", frame_lists(data.frames)}};
  write_json(out / "metadata.json", meta);
  std::cerr << "flowgs: wrote " << data.frames.size() << " frames to " << out.string() << "\n";
}

void report(const std::string& code, const std::string& message, const fs::path& out_dir) {
  const json record = {{"error", {{"code", code}, {"message", message}}}};
  std::cerr << record.dump() << "\n";
  if (out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream os(out_dir / "error.json");
  if (os) os << record.dump(2) << "\n";
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"SfM-free Gaussian splatting reconstruction with flow-guided pose estimation",
               "flowgs"};
  app.require_subcommand(1);

  ConfigFlags flags;
  std::string input, out, scene, poses, intrinsics, dataset, trajectory, metrics_out;
  bool all_frames = false;
  std::optional<int> render_threads;

  auto* rec = app.add_subcommand("reconstruct", "Estimate poses and a Gaussian scene from a dataset");
  rec->add_option("input", input, "Dataset directory")->required();
  rec->add_option("out", out, "Output directory for scene.bin, trajectory.txt, metrics.json, "
                              "metadata.json")
      ->required();
  add_config_flags(rec, flags);

  auto* ren = app.add_subcommand("render", "Render color (PNG) and depth (PFM) at each pose");
  ren->add_option("scene", scene, "Scene file")->required();
  ren->add_option("poses", poses, "Pose file, one 'qw qx qy qz tx ty tz' line per view")->required();
  ren->add_option("out", out, "Output directory")->required();
  ren->add_option("--intrinsics", intrinsics, "intrinsics.txt of the target camera")->required();
  ren->add_option("--threads", render_threads, "Worker threads; 0 uses every core");

  auto* ev = app.add_subcommand("evaluate", "Novel-view and trajectory metrics of a scene");
  ev->add_option("scene", scene, "Scene file")->required();
  ev->add_option("dataset", dataset, "Dataset directory")->required();
  ev->add_option("--trajectory", trajectory,
                 "Poses for every frame (default: trajectory.txt beside the scene, else "
                 "gt_poses.txt)");
  ev->add_option("--out", metrics_out, "Also write the metrics JSON here");
  ev->add_flag("--all-frames", all_frames, "Score every frame, not only held-out ones");
  add_config_flags(ev, flags);

  auto* syn = app.add_subcommand("synth", "Generate a synthetic dataset with ground truth");
  syn->add_option("out", out, "Output dataset directory")->required();
  add_config_flags(syn, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (rec->parsed()) cmd_reconstruct(input, out, flags);
    if (ren->parsed()) cmd_render(scene, poses, intrinsics, out, render_threads);
    if (ev->parsed()) cmd_evaluate(scene, dataset, trajectory, metrics_out, all_frames, flags);
    if (syn->parsed()) cmd_synth(out, flags);
  } catch (const Error& e) {
    report(to_string(e.code()), e.what(), out);
    return 1;
  } catch (const fs::filesystem_error& e) {
    report("IoError", e.what(), out);
    return 1;
  } catch (const std::exception& e) {
    report("InternalError", e.what(), out);
    return 1;
  }
  return 0;
}

}  // namespace flowgs::cli
