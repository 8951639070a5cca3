#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "flowgs/flow.hpp"
#include "flowgs/gaussian_scene.hpp"
#include "flowgs/geometry.hpp"
#include "flowgs/losses.hpp"
#include "flowgs/rasterizer.hpp"

namespace flowgs {

struct AdamConfig {
  double lr = 4e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam moments for one parameter group.
class AdamState {
 public:
  AdamState() = default;
  AdamState(size_t size, const AdamConfig& config)
      : config_(config), m_(size, 0.0), v_(size, 0.0) {}

  /// Applies one update. Returns false and leaves everything untouched when
  /// any gradient is non-finite.
  bool step(std::span<double> params, std::span<const double> grads);

  /// Rebuilds the moments after the group was re-indexed: output element block
  /// i takes block origin[i] when carried[i], zeros otherwise.
  void remap(std::span<const int> origin, const std::vector<bool>& carried, size_t block);

  int step_count() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  size_t size() const { return m_.size(); }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  int steps_ = 0;
};

/// Optimizable pose: the raw quaternion is free and normalized on read.
struct PoseParams {
  explicit PoseParams(const PoseSE3& pose)
      : q(pose.quat_wxyz()), t(pose.translation()) {}

  PoseSE3 pose() const { return PoseSE3(QuatVec(q), t); }

  /// Packs as (qw, qx, qy, qz, tx, ty, tz).
  std::array<double, 7> packed() const;
  void unpack(std::span<const double, 7> v);
  /// Converts a gradient taken at pose() into one for the raw parameters.
  std::array<double, 7> raw_gradient(const PoseGradient& g) const;

  QuatVec q;
  Eigen::Vector3d t;
};

/// Linear extrapolation q + s(q - q_prev2), t + s(t - t_prev2), normalized, with
/// q_prev2 sign-aligned to q_prev. `steps` is the ratio of the frame gap ahead to
/// the gap behind, so held-out frames between train frames are accounted for.
PoseSE3 predict_pose_const_velocity(const PoseSE3& pose_prev2, const PoseSE3& pose_prev,
                                    double steps = 1.0);

/// Projection-flow supervision from the previous frame (t) into the frame
/// being posed (t+1).
struct FlowConstraint {
  PoseSE3 source_pose;
  /// Rendered depth at source_pose; pixels set to 0 are skipped.
  DepthMap source_depth;
  /// O_{t -> t+1}.
  FlowField prior;
  /// Visibility and rigidity mask over source pixels.
  Mask mask;
};

struct PoseEstimationOptions {
  int iters = 30;
  LossWeights weights;
  AdamConfig adam;
  RenderOptions render;
};

struct PoseObjective {
  double total = 0.0;
  double rgb = 0.0;
  double flow = 0.0;
  size_t flow_pixels = 0;
  PoseGradient grad;
};

/// lambda_rgb * L_rgb + lambda_flow * L_flow at `pose`, with the pose gradient
/// when requested. `flow` may be null (photometric term only).
PoseObjective evaluate_pose_objective(const GaussianCloud& cloud, const CameraIntrinsics& k,
                                      const RgbImage& target, const FlowConstraint* flow,
                                      const PoseSE3& pose, const PoseEstimationOptions& options,
                                      bool want_grad);

struct PoseEstimate {
  PoseSE3 pose;
  double initial_objective = 0.0;
  double best_objective = 0.0;
  int best_iteration = 0;  // 0 = the initial pose
  std::vector<double> history;
};

/// Adam over (q, t) with the cloud frozen; returns the lowest-objective iterate.
PoseEstimate estimate_pose(const GaussianCloud& cloud, const CameraIntrinsics& k,
                           const RgbImage& target, const FlowConstraint* flow,
                           const PoseSE3& init, const PoseEstimationOptions& options);

/// Everything needed to evaluate the scene objective on one frame.
struct SceneFrameView {
  const RgbImage* image = nullptr;
  const DepthMap* prior_depth = nullptr;  // null disables the depth term
  PoseSE3 pose;
  /// Optional projection-flow term towards the next processed frame.
  const FlowField* prior_flow = nullptr;
  const Mask* rigid_mask = nullptr;
  PoseSE3 next_pose;
};

struct SceneObjectiveOptions {
  LossWeights weights;
  double gamma = 0.9;
  RenderOptions render;
};

struct SceneObjective {
  double total = 0.0;
  double rgb = 0.0;
  double flow = 0.0;
  double depth = 0.0;
  SceneGradients grads;
};

SceneObjective evaluate_scene_objective(const GaussianCloud& cloud, const CameraIntrinsics& k,
                                        const SceneFrameView& frame,
                                        const SceneObjectiveOptions& options);

/// Per-group learning rates for the Gaussian parameters.
struct SceneLearningRates {
  double position = 1.6e-4;  // multiplied by the scene extent
  double sh_dc = 2.5e-3;
  double sh_rest = 2.5e-3 / 20.0;
  double opacity = 5e-2;
  double scale = 5e-3;
  double rotation = 1e-3;
};

/// Adam over every Gaussian parameter group plus the positional-gradient
/// statistics that drive densification.
class SceneOptimizer {
 public:
  SceneOptimizer(const GaussianCloud& cloud, const SceneLearningRates& lrs, double scene_extent,
                 const AdamConfig& base = {});

  /// One Adam step. Returns the number of parameter groups skipped because of
  /// non-finite gradients.
  int step(GaussianCloud& cloud, const SceneGradients& grads);

  /// Mean accumulated |d mean2d| over the views where each Gaussian was visible.
  std::vector<double> mean_grad_norms() const;

  /// Densify/prune the cloud, carry optimizer state over and reset statistics.
  DensifyResult densify(GaussianCloud& cloud, const DensifyOptions& options,
                        std::mt19937_64& rng);

  void reset_statistics();
  double scene_extent() const { return extent_; }
  const std::vector<double>& grad_accum() const { return grad_accum_; }
  const std::vector<int>& grad_views() const { return grad_views_; }

 private:
  double extent_;
  int sh_stride_;
  AdamState positions_, rotations_, scales_, opacity_, sh_dc_, sh_rest_;
  std::vector<double> grad_accum_;
  std::vector<int> grad_views_;
};

struct SceneStepResult {
  size_t frame = 0;  // index into the sampled-from span
  SceneObjective objective;
  int skipped_groups = 0;
};

/// Samples one frame uniformly and takes one optimizer step on its scene
/// objective; the pose stays fixed.
SceneStepResult optimize_scene_step(std::span<const SceneFrameView> frames, GaussianCloud& cloud,
                                    const CameraIntrinsics& k, SceneOptimizer& optimizer,
                                    const SceneObjectiveOptions& options, std::mt19937_64& rng);

}  // namespace flowgs
