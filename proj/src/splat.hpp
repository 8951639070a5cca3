#pragma once

// Shared per-Gaussian projection used by the forward and backward passes.

#include <array>

#include <Eigen/Core>

#include "flowgs/gaussian_scene.hpp"
#include "flowgs/geometry.hpp"

namespace flowgs::detail {

struct ViewFrame {
  ViewFrame(const PoseSE3& pose, const CameraIntrinsics& k, double z_near)
      : rot(pose.rotation_matrix()), t(pose.translation()), center(-(rot.transpose() * t)),
        k(k), z_near(z_near) {}

  Eigen::Matrix3d rot;
  Eigen::Vector3d t;
  Eigen::Vector3d center;
  CameraIntrinsics k;
  double z_near;
};

struct Splat {
  int index = -1;
  Eigen::Vector3d p_cam;
  Eigen::Vector2d mean2d;
  Eigen::Matrix2d cov2d;  // dilated
  Eigen::Matrix2d conic;  // inverse of cov2d
  double radius_sq = 0.0; // footprint: |pixel - mean2d|^2 <= radius_sq
  double depth = 0.0;
  Eigen::Vector3d color;
  std::array<bool, 3> color_clamped{};
  double opacity = 0.0;
};

/// Perspective Jacobian d(u, v)/d(x, y, z) at a camera-frame point.
inline Eigen::Matrix<double, 2, 3> perspective_jacobian(const Eigen::Vector3d& p,
                                                        const CameraIntrinsics& k) {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> j;
  j << k.fx * iz, 0.0, -k.fx * p.x() * iz * iz, 0.0, k.fy * iz, -k.fy * p.y() * iz * iz;
  return j;
}

/// Returns false when the Gaussian is culled (behind the near plane).
bool project_splat(const GaussianCloud& cloud, size_t i, const ViewFrame& view, Splat& out);

}  // namespace flowgs::detail
