#pragma once

#include <Eigen/Core>

#include "flowgs/geometry.hpp"
#include "flowgs/types.hpp"

namespace flowgs {

/// Dense displacement field, target minus source, in pixels.
struct FlowField {
  FlowField() = default;
  FlowField(int width, int height)
      : u(width, height, 0.0), v(width, height, 0.0), valid(width, height, 0) {}

  int width() const { return u.width(); }
  int height() const { return u.height(); }
  bool empty() const { return u.empty(); }

  Grid<double> u;
  Grid<double> v;
  Mask valid;
};

/// Unprojects every pixel with its rendered depth at `pose_t` and reprojects it
/// into `pose_next`. Pixels with non-positive, non-finite or sub-z_near depth,
/// or landing behind the next camera, are invalid.
FlowField projection_flow(const DepthMap& rendered_depth, const PoseSE3& pose_t,
                          const PoseSE3& pose_next, const CameraIntrinsics& k,
                          double z_near = kDefaultZNear);

struct ProjectionFlowGrad {
  DepthMap d_depth;
  PoseGradient d_pose_next;
};

/// Adjoint of projection_flow for the flow gradient (d_u, d_v); invalid
/// pixels contribute nothing.
ProjectionFlowGrad projection_flow_backward(const DepthMap& rendered_depth,
                                            const PoseSE3& pose_t, const PoseSE3& pose_next,
                                            const CameraIntrinsics& k, const FlowField& flow,
                                            const Grid<double>& d_u, const Grid<double>& d_v);

/// Epipolar consistency of `flow_prev` (frame t-1 -> t) under the pose pair.
/// The result indexes frame-t pixels: a pixel is false if any flow vector landing
/// on it (nearest-pixel rounding) has Sampson distance >= beta. Unlanded pixels
/// stay true. An empty flow or a degenerate baseline yields an all-true mask.
Mask rigid_mask(const FlowField& flow_prev, const PoseSE3& pose_prev, const PoseSE3& pose_t,
                const CameraIntrinsics& k, double beta);

/// Elementwise AND. Throws DimensionMismatch.
Mask combine_mask(const Mask& a, const Mask& b);

}  // namespace flowgs
