#pragma once

#include <array>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "flowgs/types.hpp"

namespace flowgs {

inline constexpr double kDefaultZNear = 1e-4;

/// Pinhole camera. Pixel centers sit at integer coordinates.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws InvalidArgument unless fx, fy > 0 and the principal point lies
  /// inside the image.
  void validate() const;

  Eigen::Matrix3d matrix() const;
  Eigen::Matrix3d inverse_matrix() const;
};

/// Quaternion components in (w, x, y, z) order.
using QuatVec = Eigen::Vector4d;

/// Rigid world-to-camera transform: p_cam = R(q) * p_world + t.
/// The quaternion is re-normalized on every write.
class PoseSE3 {
 public:
  PoseSE3() = default;
  PoseSE3(const Eigen::Quaterniond& q, const Eigen::Vector3d& t);
  PoseSE3(const QuatVec& wxyz, const Eigen::Vector3d& t);

  static PoseSE3 identity() { return {}; }

  const Eigen::Quaterniond& rotation() const { return q_; }
  const Eigen::Vector3d& translation() const { return t_; }
  QuatVec quat_wxyz() const { return {q_.w(), q_.x(), q_.y(), q_.z()}; }

  void set_rotation(const Eigen::Quaterniond& q);
  void set_translation(const Eigen::Vector3d& t) { t_ = t; }

  Eigen::Matrix3d rotation_matrix() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation_matrix() * p + t_;
  }
  /// Camera center in world coordinates.
  Eigen::Vector3d center() const { return -(rotation_matrix().transpose() * t_); }

  PoseSE3 inverse() const;

  /// (this * other)(p) == this(other(p)).
  PoseSE3 operator*(const PoseSE3& other) const;

 private:
  Eigen::Quaterniond q_ = Eigen::Quaterniond::Identity();
  Eigen::Vector3d t_ = Eigen::Vector3d::Zero();
};

/// Gradient of a scalar with respect to a pose's (q, t). The quaternion part is
/// taken through normalization at the stored unit quaternion.
struct PoseGradient {
  QuatVec q = QuatVec::Zero();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  PoseGradient& operator+=(const PoseGradient& o) {
    q += o.q;
    t += o.t;
    return *this;
  }
};

struct FundamentalMatrix {
  Eigen::Matrix3d f = Eigen::Matrix3d::Zero();
};

Eigen::Vector2d project(const Eigen::Vector3d& p_world, const PoseSE3& pose,
                        const CameraIntrinsics& k, double z_near = kDefaultZNear);

Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, double depth, const PoseSE3& pose,
                          const CameraIntrinsics& k);

/// b * a^-1: maps camera-a coordinates into camera-b coordinates.
PoseSE3 relative_pose(const PoseSE3& a, const PoseSE3& b);

/// F with x_b^T F x_a = 0 for a static point seen at x_a in a and x_b in b.
/// Normalized to unit Frobenius norm.
FundamentalMatrix fundamental_from_poses(const PoseSE3& a, const PoseSE3& b,
                                         const CameraIntrinsics& k);

/// First-order geometric error (px^2); +inf when the gradient norm underflows.
double sampson_distance(const Eigen::Vector2d& x, const Eigen::Vector2d& x_prime,
                        const FundamentalMatrix& f);

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

/// Rotation matrix of a unit (w, x, y, z) quaternion using the polynomial
/// form, paired with its partial derivatives w.r.t. each component.
Eigen::Matrix3d quat_to_matrix(const QuatVec& q);
std::array<Eigen::Matrix3d, 4> quat_matrix_partials(const QuatVec& q);

/// Chains dL/dR at R(normalize(q)) into dL/dq for the raw quaternion q.
QuatVec rotation_grad_to_quat(const Eigen::Matrix3d& d_rot, const QuatVec& q);

/// Geodesic angle between two rotations, radians.
double rotation_angle(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b);

}  // namespace flowgs
