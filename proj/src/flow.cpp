#include "flowgs/flow.hpp"

#include <cmath>

#include "flowgs/parallel.hpp"

namespace flowgs {

namespace {

struct FlowGeometry {
  FlowGeometry(const PoseSE3& pose_t, const PoseSE3& pose_next, const CameraIntrinsics& k)
      : rot_t_inv(pose_t.rotation_matrix().transpose()), t_t(pose_t.translation()),
        rot_n(pose_next.rotation_matrix()), t_n(pose_next.translation()), k(k) {}

  Eigen::Vector3d ray(int x, int y) const {
    return {(x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0};
  }
  Eigen::Vector3d world(int x, int y, double depth) const {
    return rot_t_inv * (depth * ray(x, y) - t_t);
  }

  Eigen::Matrix3d rot_t_inv;
  Eigen::Vector3d t_t;
  Eigen::Matrix3d rot_n;
  Eigen::Vector3d t_n;
  CameraIntrinsics k;
};

bool usable_depth(double d, double z_near) { return std::isfinite(d) && d > z_near; }

}  // namespace

FlowField projection_flow(const DepthMap& rendered_depth, const PoseSE3& pose_t,
                          const PoseSE3& pose_next, const CameraIntrinsics& k, double z_near) {
  if (!rendered_depth.same_shape(k.width, k.height)) {
    throw Error(ErrorCode::DimensionMismatch, "projection_flow: depth size != intrinsics");
  }
  const FlowGeometry geo(pose_t, pose_next, k);
  FlowField flow(k.width, k.height);
  parallel_for(static_cast<size_t>(k.height), [&](size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < k.width; ++x) {
      const double d = rendered_depth(x, y);
      if (!usable_depth(d, z_near)) continue;
      const Eigen::Vector3d p = geo.rot_n * geo.world(x, y, d) + geo.t_n;
      if (!(p.z() > z_near)) continue;
      flow.u(x, y) = k.fx * p.x() / p.z() + k.cx - x;
      flow.v(x, y) = k.fy * p.y() / p.z() + k.cy - y;
      flow.valid(x, y) = 1;
    }
  });
  return flow;
}

ProjectionFlowGrad projection_flow_backward(const DepthMap& rendered_depth,
                                            const PoseSE3& pose_t, const PoseSE3& pose_next,
                                            const CameraIntrinsics& k, const FlowField& flow,
                                            const Grid<double>& d_u, const Grid<double>& d_v) {
  require_same_shape(rendered_depth, flow.u, "projection_flow_backward");
  require_same_shape(d_u, flow.u, "projection_flow_backward d_u");
  require_same_shape(d_v, flow.u, "projection_flow_backward d_v");
  const FlowGeometry geo(pose_t, pose_next, k);
  ProjectionFlowGrad out;
  out.d_depth = DepthMap(k.width, k.height, 0.0);

  std::vector<Eigen::Matrix3d> row_rot(k.height, Eigen::Matrix3d::Zero());
  std::vector<Eigen::Vector3d> row_t(k.height, Eigen::Vector3d::Zero());
  parallel_for(static_cast<size_t>(k.height), [&](size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < k.width; ++x) {
      if (!flow.valid(x, y)) continue;
      const double gu = d_u(x, y), gv = d_v(x, y);
      if (gu == 0.0 && gv == 0.0) continue;
      const double d = rendered_depth(x, y);
      const Eigen::Vector3d ray = geo.ray(x, y);
      const Eigen::Vector3d world = geo.rot_t_inv * (d * ray - geo.t_t);
      const Eigen::Vector3d p = geo.rot_n * world + geo.t_n;
      const double iz = 1.0 / p.z();
      const Eigen::Vector3d g_p(gu * k.fx * iz, gv * k.fy * iz,
                                -(gu * k.fx * p.x() + gv * k.fy * p.y()) * iz * iz);
      row_t[row] += g_p;
      row_rot[row] += g_p * world.transpose();
      out.d_depth(x, y) = g_p.dot(geo.rot_n * (geo.rot_t_inv * ray));
    }
  });
  Eigen::Matrix3d d_rot = Eigen::Matrix3d::Zero();
  for (int y = 0; y < k.height; ++y) {
    d_rot += row_rot[y];
    out.d_pose_next.t += row_t[y];
  }
  out.d_pose_next.q = rotation_grad_to_quat(d_rot, pose_next.quat_wxyz());
  return out;
}

Mask rigid_mask(const FlowField& flow_prev, const PoseSE3& pose_prev, const PoseSE3& pose_t,
                const CameraIntrinsics& k, double beta) {
  Mask mask(k.width, k.height, 1);
  if (flow_prev.empty()) return mask;
  if (!flow_prev.u.same_shape(k.width, k.height)) {
    throw Error(ErrorCode::DimensionMismatch, "rigid_mask: flow size != intrinsics");
  }
  FundamentalMatrix f;
  try {
    f = fundamental_from_poses(pose_prev, pose_t, k);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DegenerateBaseline) return mask;
    throw;
  }
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      if (!flow_prev.valid(x, y)) continue;
      const Eigen::Vector2d src(x, y);
      const Eigen::Vector2d dst(x + flow_prev.u(x, y), y + flow_prev.v(x, y));
      const long lx = std::lround(dst.x());
      const long ly = std::lround(dst.y());
      if (lx < 0 || ly < 0 || lx >= k.width || ly >= k.height) continue;
      if (!(sampson_distance(src, dst, f) < beta)) {
        mask(static_cast<int>(lx), static_cast<int>(ly)) = 0;
      }
    }
  }
  return mask;
}

Mask combine_mask(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "combine_mask");
  Mask out(a.width(), a.height(), 0);
  for (size_t i = 0; i < a.size(); ++i) out[i] = (a[i] && b[i]) ? 1 : 0;
  return out;
}

}  // namespace flowgs
