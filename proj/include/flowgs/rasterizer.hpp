#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "flowgs/gaussian_scene.hpp"
#include "flowgs/geometry.hpp"
#include "flowgs/types.hpp"

namespace flowgs {

inline constexpr int kTileSize = 16;

struct RenderOptions {
  double z_near = kDefaultZNear;
  double alpha_clamp = 0.99;
  /// Stop compositing a pixel once transmittance would drop below the cutoff.
  bool early_termination = true;
  double transmittance_cutoff = 1e-4;
};

namespace detail {
struct RenderState;
}

struct RenderOutput {
  RgbImage color;
  DepthMap depth;  // alpha-blended camera-frame z, not normalized by alpha
  DepthMap alpha;  // accumulated opacity
  DepthMap transmittance;  // remaining transmittance after compositing
  /// Blend records for render_backward; null for naive_render output.
  std::shared_ptr<const detail::RenderState> state;
};

struct SceneGradients {
  std::vector<Eigen::Vector3d> positions;
  std::vector<QuatVec> rotations;
  std::vector<Eigen::Vector3d> log_scales;
  std::vector<double> opacity_logits;
  std::vector<double> sh;
  PoseGradient pose;
  /// |dL/d mean2d| in normalized device coordinates, per Gaussian.
  std::vector<double> mean2d_grad_norm;
  std::vector<std::uint8_t> visible;

  void reset(const GaussianCloud& cloud);
};

/// Tiled, depth-sorted alpha compositing. Throws EmptyScene on an empty cloud.
RenderOutput render(const GaussianCloud& cloud, const PoseSE3& pose, const CameraIntrinsics& k,
                    const RenderOptions& options = {});

/// Reference compositor: every pixel walks every projected Gaussian in global
/// depth order with no tiling and no early termination.
RenderOutput naive_render(const GaussianCloud& cloud, const PoseSE3& pose,
                          const CameraIntrinsics& k, const RenderOptions& options = {});

/// Exact gradients of sum(d_color * color + d_depth * depth + d_alpha * alpha)
/// w.r.t. every cloud parameter and the pose. Empty upstream grids count as zero.
/// Throws StaleRenderState if `output` was not produced by render() on the
/// same cloud, pose and intrinsics.
SceneGradients render_backward(const GaussianCloud& cloud, const PoseSE3& pose,
                               const CameraIntrinsics& k, const RenderOutput& output,
                               const RgbImage& d_color, const DepthMap& d_depth,
                               const DepthMap& d_alpha);

/// True where alpha > gamma (strict).
Mask visibility_map(const DepthMap& alpha, double gamma);
inline Mask visibility_map(const RenderOutput& output, double gamma) {
  return visibility_map(output.alpha, gamma);
}

/// depth / alpha where alpha > min_alpha, else 0.
DepthMap expected_depth(const RenderOutput& output, double min_alpha = 0.5);

/// Stable hash of every parameter bit of the cloud.
std::uint64_t cloud_fingerprint(const GaussianCloud& cloud);

}  // namespace flowgs
