#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "flowgs/geometry.hpp"
#include "flowgs/types.hpp"

namespace flowgs {

inline constexpr int kMaxShDegree = 3;
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
/// Low-pass dilation added to both diagonal entries of every 2D covariance.
inline constexpr double kCovDilation = 0.3;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Structure-of-arrays store for the optimizable scene.
///
/// SH coefficients are laid out [gaussian][coefficient][channel]; coefficient 0
/// is the view-independent (DC) term.
struct GaussianCloud {
  int sh_degree = 1;
  std::vector<Eigen::Vector3d> positions;
  std::vector<QuatVec> rotations;  // (w, x, y, z), unit norm
  std::vector<Eigen::Vector3d> log_scales;
  std::vector<double> opacity_logits;
  std::vector<double> sh;

  size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  int coeffs() const { return sh_coeff_count(sh_degree); }
  size_t sh_stride() const { return static_cast<size_t>(coeffs()) * 3; }

  std::span<double> sh_of(size_t i) { return {sh.data() + i * sh_stride(), sh_stride()}; }
  std::span<const double> sh_of(size_t i) const {
    return {sh.data() + i * sh_stride(), sh_stride()};
  }

  double opacity(size_t i) const;

  void resize(size_t n);
  /// Appends a copy of Gaussian `i` of `src`; SH degrees must agree.
  void push_back_from(const GaussianCloud& src, size_t i);

  /// Throws InvalidArgument if shapes disagree, a rotation is not unit norm
  /// (1e-9), or any value is non-finite.
  void validate() const;
};

struct ProjectedGaussian {
  Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();  // dilated
  double depth = 0.0;
  Eigen::Vector3d view_color = Eigen::Vector3d::Zero();
  double alpha = 0.0;
};

double sigmoid(double x);
double logit(double p);

/// R S S^T R^T for S = diag(exp(log_scale)).
Eigen::Matrix3d build_covariance(const QuatVec& rotation, const Eigen::Vector3d& log_scale);

/// Real SH basis values (and optionally their derivatives w.r.t. the direction)
/// up to `degree`, in the coefficient order of GaussianCloud::sh.
void sh_basis(int degree, const Eigen::Vector3d& dir, std::span<double> basis,
              std::span<Eigen::Vector3d> d_basis = {});

/// Expansion + 0.5, clamped to [0, 1].
Eigen::Vector3d eval_sh(int degree, std::span<const double> coeffs,
                        const Eigen::Vector3d& view_dir);

/// Throws DepthBehindCamera when the transformed mean has z <= z_near.
ProjectedGaussian project_gaussian(const GaussianCloud& cloud, size_t index,
                                   const PoseSE3& pose, const CameraIntrinsics& k,
                                   double z_near = kDefaultZNear);

struct InitOptions {
  int stride = 2;
  int sh_degree = 1;
  double opacity = 0.1;
};

/// One Gaussian per `stride`-th pixel with positive finite depth.
GaussianCloud init_from_depth(const RgbImage& image, const DepthMap& depth,
                              const PoseSE3& pose, const CameraIntrinsics& k,
                              const InitOptions& options = {});

/// Mean Euclidean distance from each point to its (up to) three nearest
/// neighbours. Uses a uniform hash grid; exact.
std::vector<double> mean_neighbor_distance(std::span<const Eigen::Vector3d> points,
                                           int neighbors = 3);

struct DensifyOptions {
  double opacity_floor = 0.005;
  double grad_threshold = 2e-4;
  /// Gaussians whose largest scale exceeds percent_dense * scene_extent are
  /// split, smaller ones cloned.
  double percent_dense = 0.01;
  double scene_extent = 1.0;
  double split_scale_divisor = 1.6;
};

struct DensifyResult {
  GaussianCloud cloud;
  /// For every output Gaussian: index of the input Gaussian it came from.
  std::vector<int> origin;
  /// True when the output Gaussian is a bitwise copy of its origin that keeps
  /// its optimizer state (i.e. it was neither created nor altered).
  std::vector<bool> carried;
  int cloned = 0;
  int split = 0;
  int pruned = 0;
};

DensifyResult densify_and_prune(const GaussianCloud& cloud, std::span<const double> grad_accum,
                                const DensifyOptions& options, std::mt19937_64& rng);

/// Rounds every parameter to float precision and re-normalizes rotations.
/// Bitwise equal to load_scene(save_scene(cloud)).
GaussianCloud quantize_to_float(const GaussianCloud& cloud);

inline constexpr std::uint32_t kSceneFormatVersion = 1;

/// Binary container: "FSGS", u32 version, u64 N, u32 sh_degree, then the
/// parameter arrays column-major as little-endian float32.
void save_scene(const std::filesystem::path& path, const GaussianCloud& cloud);
GaussianCloud load_scene(const std::filesystem::path& path);

/// ASCII PLY with positions and 8-bit view-independent colors.
void export_ply(const std::filesystem::path& path, const GaussianCloud& cloud);

}  // namespace flowgs
