#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowgs/flow.hpp"
#include "flowgs/gaussian_scene.hpp"
#include "flowgs/geometry.hpp"
#include "flowgs/losses.hpp"
#include "flowgs/optimizer.hpp"

namespace flowgs {

enum class FrameRole { Train, Test };

struct FrameRecord {
  int index = 0;
  RgbImage image;
  DepthMap prior_depth;  // empty when absent
  /// Flow to the next train frame; empty for the last one and for test frames.
  FlowField prior_flow_forward;
  std::optional<PoseSE3> estimated_pose;
  Mask visibility;
  /// Rigid mask over this frame's pixels, used for its forward flow.
  Mask rigid;
  FrameRole role = FrameRole::Train;
};

/// Frames with index % test_every == test_every - 1 are held out.
FrameRole split_role(int index, int test_every);

struct TrajectoryMetrics {
  double ate = 0.0;    // RMSE after Sim(3) alignment, ground-truth units
  double rpe_t = 0.0;  // mean relative translation error, ground-truth units
  double rpe_r = 0.0;  // mean relative rotation error, degrees
  double scale = 1.0;  // similarity scale applied to the estimate
};

struct PipelineConfig {
  double gamma = 0.9;
  double beta = 0.5;
  LossWeights weights;
  int pose_iters = 30;
  int scene_iters = 30;
  int init_iters = 300;
  int densify_every = 100;
  int test_pose_iters = 100;
  int test_every = 8;
  bool use_rigid_mask = true;
  bool use_visibility_mask = true;
  InitOptions init;
  DensifyOptions densify;  // scene_extent is filled in from the initial cloud
  SceneLearningRates learning_rates;
  double pose_lr = 4e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FrameDiagnostics {
  int index = 0;
  double initial_objective = 0.0;
  double best_objective = 0.0;
  int best_iteration = 0;
  size_t flow_pixels = 0;
  size_t masked_out = 0;  // flow-valid source pixels dropped by the masks
  size_t gaussians = 0;
};

struct ReconstructionResult {
  /// Final scene as stored on disk (float precision).
  GaussianCloud cloud;
  /// Unquantized optimizer state; save_scene of this reproduces `cloud` on load.
  GaussianCloud raw_cloud;
  std::vector<int> frame_indices;  // train frames, in processing order
  std::vector<PoseSE3> poses;
  std::vector<FrameDiagnostics> diagnostics;
  std::vector<std::string> events;
};

using Logger = std::function<void(const std::string&)>;

/// Progressive reconstruction over the train frames of `frames` (test frames
/// are skipped). Fills estimated_pose and the masks of every train frame.
ReconstructionResult reconstruct(std::vector<FrameRecord>& frames, const CameraIntrinsics& k,
                                 const PipelineConfig& config, const Logger& log = {});

/// Poses the test frames against the frozen cloud, starting from the average
/// of the neighbouring train poses.
void estimate_test_poses(std::vector<FrameRecord>& frames, const GaussianCloud& cloud,
                         const CameraIntrinsics& k, const PipelineConfig& config);

struct NvsFrameMetrics {
  int index = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct NvsMetrics {
  std::vector<NvsFrameMetrics> frames;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

/// PSNR/SSIM of renders at each frame's estimated pose. `quantize` rounds
/// renders to 8 bits first, as an image written to disk would be.
NvsMetrics evaluate_nvs(const GaussianCloud& cloud, const std::vector<FrameRecord>& frames,
                        const CameraIntrinsics& k, bool quantize = true);

/// Least-squares similarity (s, R, t) with dst ~ s R src + t.
struct Similarity {
  double s = 1.0;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};
Similarity umeyama(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst);

TrajectoryMetrics evaluate_trajectory(const std::vector<PoseSE3>& estimated,
                                      const std::vector<PoseSE3>& ground_truth);

/// Maximum distance between any two ground-truth camera centers.
double trajectory_extent(const std::vector<PoseSE3>& poses);

struct SynthConfig {
  int width = 128;
  int height = 96;
  double focal = 70.0;
  int frames = 20;
  int gaussians = 5000;
  std::uint64_t seed = 1;
  bool low_texture = false;
  /// Trajectory: starts at rest `distance` in front of the patch, advances
  /// towards it by `advance` while sweeping `lateral` sideways and yawing by
  /// `yaw_degrees`, with a vertical bob of `vertical_wobble`. Smoothstep
  /// timing, so it also ends at rest.
  double distance = 3.0;
  /// Peak height of the surface undulation.
  double relief = 1.0;
  double advance = 1.0;
  double lateral = 0.3;
  double vertical_wobble = 0.15;
  double yaw_degrees = 6.0;
  /// Per-frame affine depth error: scale in [scale_lo, scale_hi], shift in
  /// [-shift, shift] (world units).
  bool perturb_depth = false;
  double depth_scale_lo = 0.8;
  double depth_scale_hi = 1.2;
  double depth_shift = 0.03;
  /// Fraction of pixels in a fixed image region whose flow is pushed off its
  /// epipolar line by [outlier_min_px, outlier_max_px].
  double outlier_fraction = 0.0;
  double outlier_min_px = 5.0;
  double outlier_max_px = 8.0;
  int test_every = 8;
  /// Multiplies every length above (depth_shift excepted) to give world units.
  /// Pose recovery under the fixed pose learning rate depends on it: Adam
  /// moves translation by ~lr per step regardless of scene size.
  double scale = 0.125;

  void validate() const;
};

struct SyntheticDataset {
  CameraIntrinsics k;
  std::vector<FrameRecord> frames;
  std::vector<PoseSE3> gt_poses;  // one per frame
  GaussianCloud gt_cloud;          // float precision
  /// Rendered GT depth (depth / alpha where alpha > 0.5, else 0), before any
  /// perturbation.
  std::vector<DepthMap> gt_depths;
  /// Source pixels whose forward flow was corrupted, per frame (empty if none).
  std::vector<Mask> outliers;
};

SyntheticDataset generate_synthetic(const SynthConfig& config);

/// Dataset directory: images/%06d.png, depth/%06d.pfm, flow/%06d_fwd.flo,
/// intrinsics.txt and an optional gt_poses.txt.
struct Dataset {
  CameraIntrinsics k;
  std::vector<FrameRecord> frames;
  std::vector<PoseSE3> gt_poses;  // empty when absent
};

Dataset load_dataset(const std::filesystem::path& dir, int test_every = 8);
void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& data);

CameraIntrinsics read_intrinsics(const std::filesystem::path& path);
void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& k);
/// One pose per line: qw qx qy qz tx ty tz.
std::vector<PoseSE3> read_poses(const std::filesystem::path& path);
void write_poses(const std::filesystem::path& path, const std::vector<PoseSE3>& poses);

}  // namespace flowgs
