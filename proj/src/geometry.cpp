#include "flowgs/geometry.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace flowgs {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DepthBehindCamera: return "DepthBehindCamera";
    case ErrorCode::InvalidDepth: return "InvalidDepth";
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::EmptyInit: return "EmptyInit";
    case ErrorCode::EmptyScene: return "EmptyScene";
    case ErrorCode::StaleRenderState: return "StaleRenderState";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::InsufficientValidPixels: return "InsufficientValidPixels";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "intrinsics: image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw Error(ErrorCode::InvalidArgument, "intrinsics: principal point outside the image");
  }
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d m;
  m << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return m;
}

Eigen::Matrix3d CameraIntrinsics::inverse_matrix() const {
  Eigen::Matrix3d m;
  m << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return m;
}

PoseSE3::PoseSE3(const Eigen::Quaterniond& q, const Eigen::Vector3d& t) : t_(t) {
  set_rotation(q);
}

PoseSE3::PoseSE3(const QuatVec& wxyz, const Eigen::Vector3d& t)
    : PoseSE3(Eigen::Quaterniond(wxyz[0], wxyz[1], wxyz[2], wxyz[3]), t) {}

void PoseSE3::set_rotation(const Eigen::Quaterniond& q) {
  q_ = q;
  q_.normalize();
}

Eigen::Matrix3d PoseSE3::rotation_matrix() const { return quat_to_matrix(quat_wxyz()); }

PoseSE3 PoseSE3::inverse() const {
  const Eigen::Quaterniond qi = q_.conjugate();
  return PoseSE3(qi, -(quat_to_matrix({qi.w(), qi.x(), qi.y(), qi.z()}) * t_));
}

PoseSE3 PoseSE3::operator*(const PoseSE3& other) const {
  return PoseSE3(q_ * other.q_, rotation_matrix() * other.t_ + t_);
}

Eigen::Vector2d project(const Eigen::Vector3d& p_world, const PoseSE3& pose,
                        const CameraIntrinsics& k, double z_near) {
  const Eigen::Vector3d p = pose.apply(p_world);
  if (!(p.z() > z_near)) {
    throw Error(ErrorCode::DepthBehindCamera,
                "project: camera-frame depth " + std::to_string(p.z()) + " <= z_near");
  }
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, double depth, const PoseSE3& pose,
                          const CameraIntrinsics& k) {
  if (!std::isfinite(depth) || !(depth > 0.0)) {
    throw Error(ErrorCode::InvalidDepth, "unproject: depth must be positive and finite");
  }
  const Eigen::Vector3d p_cam((pixel.x() - k.cx) / k.fx * depth,
                              (pixel.y() - k.cy) / k.fy * depth, depth);
  return pose.rotation_matrix().transpose() * (p_cam - pose.translation());
}

PoseSE3 relative_pose(const PoseSE3& a, const PoseSE3& b) { return b * a.inverse(); }

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

FundamentalMatrix fundamental_from_poses(const PoseSE3& a, const PoseSE3& b,
                                         const CameraIntrinsics& k) {
  const PoseSE3 rel = relative_pose(a, b);
  const double baseline = rel.translation().norm();
  if (!(baseline > 1e-9)) {
    throw Error(ErrorCode::DegenerateBaseline,
                "fundamental_from_poses: relative translation below 1e-9");
  }
  const Eigen::Matrix3d essential = skew(rel.translation() / baseline) * rel.rotation_matrix();
  const Eigen::Matrix3d k_inv = k.inverse_matrix();
  FundamentalMatrix out;
  out.f = k_inv.transpose() * essential * k_inv;
  out.f /= out.f.norm();
  return out;
}

double sampson_distance(const Eigen::Vector2d& x, const Eigen::Vector2d& x_prime,
                        const FundamentalMatrix& f) {
  const Eigen::Vector3d xh(x.x(), x.y(), 1.0);
  const Eigen::Vector3d xph(x_prime.x(), x_prime.y(), 1.0);
  const Eigen::Vector3d fx = f.f * xh;
  const Eigen::Vector3d ftxp = f.f.transpose() * xph;
  const double denom = fx.x() * fx.x() + fx.y() * fx.y() + ftxp.x() * ftxp.x() +
                       ftxp.y() * ftxp.y();
  if (!(denom >= 1e-20)) return std::numeric_limits<double>::infinity();
  const double e = xph.dot(fx);
  return e * e / denom;
}

Eigen::Matrix3d quat_to_matrix(const QuatVec& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

std::array<Eigen::Matrix3d, 4> quat_matrix_partials(const QuatVec& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Eigen::Matrix3d, 4> d;
  d[0] << 0.0, -z, y, z, 0.0, -x, -y, x, 0.0;
  d[1] << 0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x;
  d[2] << -2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y;
  d[3] << -2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0;
  for (auto& m : d) m *= 2.0;
  return d;
}

QuatVec rotation_grad_to_quat(const Eigen::Matrix3d& d_rot, const QuatVec& q) {
  const double n = q.norm();
  const QuatVec qn = q / n;
  const auto partials = quat_matrix_partials(qn);
  QuatVec g;
  for (int i = 0; i < 4; ++i) g[i] = d_rot.cwiseProduct(partials[i]).sum();
  // d normalize(q)/dq = (I - qn qn^T) / |q|
  return (g - qn * qn.dot(g)) / n;
}

double rotation_angle(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  const Eigen::Quaterniond d = a.normalized().conjugate() * b.normalized();
  return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w()));
}

}  // namespace flowgs
